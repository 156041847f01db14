#pragma once

#include <stdexcept>
#include <string>

namespace sceval {

// Base for all domain errors thrown by this library. Callers that only need
// to distinguish "bad input" from "bug" can catch this one type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- waveform files / phasor analytics ---
struct MalformedConfig : Error { using Error::Error; };
struct ChannelCountMismatch : Error { using Error::Error; };
struct SampleCountMismatch : Error { using Error::Error; };
struct EmptyRecording : Error { using Error::Error; };
struct ChannelNotFound : Error { using Error::Error; };
struct IncommensurateRate : Error { using Error::Error; };
struct MissingPhaseChannels : Error { using Error::Error; };

// --- simulation ---
struct StepTooLarge : Error { using Error::Error; };
struct MissingPlaybackSample : Error { using Error::Error; };

// --- gain tuning / calibration ---
struct NotSettled : Error { using Error::Error; };
struct ZeroDeltaV : Error { using Error::Error; };
struct NonMonotonic : Error { using Error::Error; };
struct IllConditioned : Error { using Error::Error; };
struct GainOutOfRange : Error { using Error::Error; };
struct NoRootInBracket : Error { using Error::Error; };

// --- evaluation pipeline / settings ---
struct SchemaError : Error { using Error::Error; };
struct RangeError : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct PreludeUnstable : Error { using Error::Error; };

// --- synthetic events ---
struct OverlappingDips : Error { using Error::Error; };

}  // namespace sceval
