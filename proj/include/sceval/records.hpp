#pragma once

// Fault-recorder waveform handling: a COMTRADE-1999-style ASCII subset
// (cfg + dat, analog channels only), sliding one-cycle phasor extraction,
// symmetrical components and three-phase reactive power.
//
// The exact cfg/dat grammar is documented in docs/formats.md.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sceval/errors.hpp"

namespace sceval::records {

enum class Unit { kV, kA };
enum class PhaseTag { A, B, C, none };

inline std::string_view to_string(Unit u) { return u == Unit::kV ? "kV" : "kA"; }
inline std::string_view to_string(PhaseTag p) {
  switch (p) {
    case PhaseTag::A: return "A";
    case PhaseTag::B: return "B";
    case PhaseTag::C: return "C";
    default: return "";
  }
}

struct AnalogChannel {
  std::string name;
  Unit unit = Unit::kV;
  PhaseTag phase = PhaseTag::none;
  std::vector<double> values;  // instantaneous samples, engineering units

  bool operator==(const AnalogChannel&) const = default;
};

// A multi-channel sampled waveform set as captured by a digital fault
// recorder. Immutable by convention once built; all operations below take it
// by const reference and return new values.
struct Recording {
  std::string station_id = "STATION";
  double sample_rate = 9600.0;  // samples/s
  std::string start_time = "01/01/2000,00:00:00.000000";
  std::vector<AnalogChannel> channels;
  std::size_t n_samples = 0;

  bool operator==(const Recording&) const = default;

  const AnalogChannel& channel(std::string_view name) const {
    for (const auto& ch : channels)
      if (ch.name == name) return ch;
    throw ChannelNotFound("channel not found: " + std::string(name));
  }

  bool has_channel(std::string_view name) const {
    return std::any_of(channels.begin(), channels.end(),
                       [&](const AnalogChannel& ch) { return ch.name == name; });
  }

  // Throws if structural invariants are broken. Station id and channel names
  // must be representable in the cfg grammar (no commas or line breaks).
  void validate() const {
    if (!(sample_rate > 0.0)) throw RangeError("sample_rate must be > 0");
    if (n_samples < 1) throw RangeError("recording needs at least one sample");
    if (channels.empty()) throw EmptyRecording("recording has no channels");
    auto printable = [](std::string_view s) {
      return s.find(',') == std::string_view::npos &&
             s.find('\n') == std::string_view::npos &&
             s.find('\r') == std::string_view::npos;
    };
    if (station_id.empty() || !printable(station_id))
      throw RangeError("station_id empty or contains ','/newline");
    std::unordered_set<std::string_view> names;
    for (const auto& ch : channels) {
      if (ch.name.empty() || !printable(ch.name))
        throw RangeError("channel name empty or contains ','/newline");
      if (!names.insert(ch.name).second)
        throw RangeError("duplicate channel name: " + ch.name);
      if (ch.values.size() != n_samples)
        throw SampleCountMismatch("channel " + ch.name + " has " +
                                  std::to_string(ch.values.size()) +
                                  " samples, expected " + std::to_string(n_samples));
      for (double v : ch.values)
        if (!std::isfinite(v)) throw RangeError("non-finite sample in " + ch.name);
    }
  }
};

// RMS phasor, angle in (-pi, pi]. The angle is referenced to a cosine at the
// recording start: x(t) = sqrt(2)*magnitude*cos(w*t + angle).
struct Phasor {
  double magnitude = 0.0;
  double angle = 0.0;

  std::complex<double> to_complex() const {
    return std::polar(magnitude, angle);
  }
  static Phasor from_complex(std::complex<double> z) {
    double ang = std::arg(z);
    if (ang <= -std::numbers::pi) ang += 2.0 * std::numbers::pi;
    return {std::abs(z), ang};
  }
};

// One phasor per phase per output instant.
struct PhasorSeries {
  std::vector<double> times;                   // seconds from recording start
  std::array<std::vector<Phasor>, 3> phase;    // A, B, C
  double fundamental_hz = 60.0;
};

// Single phasor sequence (e.g. the positive-sequence component over time).
struct SequenceTrace {
  std::vector<double> times;
  std::vector<Phasor> values;
  double fundamental_hz = 60.0;
};

enum class Orientation { out_of_device, into_device };

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      auto last = trim(text.substr(pos));
      if (!last.empty()) out.push_back(last);
      break;
    }
    auto line = trim(text.substr(pos, nl - pos));
    if (!line.empty()) out.push_back(line);
    pos = nl + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t c = line.find(',', pos);
    if (c == std::string_view::npos) {
      out.push_back(trim(line.substr(pos)));
      break;
    }
    out.push_back(trim(line.substr(pos, c - pos)));
    pos = c + 1;
  }
  return out;
}

template <typename T>
inline std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T value{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

inline std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

// --- COMTRADE-style subset ------------------------------------------------

inline Recording parse_comtrade(std::string_view cfg_text, std::string_view dat_text) {
  using namespace detail;
  auto lines = split_lines(cfg_text);
  if (lines.size() < 2) throw MalformedConfig("cfg too short");

  Recording rec;
  auto station_fields = split_fields(lines[0]);
  if (station_fields.empty() || station_fields[0].empty())
    throw MalformedConfig("bad station line");
  rec.station_id = std::string(station_fields[0]);

  auto counts = split_fields(lines[1]);
  if (counts.size() != 2) throw MalformedConfig("bad counts line: " + std::string(lines[1]));
  auto total = parse_number<int>(counts[0]);
  std::string_view na = counts[1];
  if (!total || na.empty() || (na.back() != 'A' && na.back() != 'a'))
    throw MalformedConfig("bad counts line: " + std::string(lines[1]));
  auto n_analog = parse_number<int>(na.substr(0, na.size() - 1));
  if (!n_analog || *n_analog < 1) throw MalformedConfig("bad analog count");
  if (*total != *n_analog)
    throw MalformedConfig("digital channels are not supported");
  const std::size_t nch = static_cast<std::size_t>(*n_analog);

  if (lines.size() < 2 + nch + 4) throw MalformedConfig("cfg truncated");

  struct Scale { double mult, offset; };
  std::vector<Scale> scales;
  scales.reserve(nch);
  for (std::size_t i = 0; i < nch; ++i) {
    auto f = split_fields(lines[2 + i]);
    if (f.size() != 6) throw MalformedConfig("bad channel line: " + std::string(lines[2 + i]));
    if (!parse_number<int>(f[0])) throw MalformedConfig("bad channel index: " + std::string(f[0]));
    AnalogChannel ch;
    ch.name = std::string(f[1]);
    if (ch.name.empty()) throw MalformedConfig("empty channel name");
    if (f[2] == "A") ch.phase = PhaseTag::A;
    else if (f[2] == "B") ch.phase = PhaseTag::B;
    else if (f[2] == "C") ch.phase = PhaseTag::C;
    else if (f[2].empty()) ch.phase = PhaseTag::none;
    else throw MalformedConfig("bad phase tag: " + std::string(f[2]));
    if (f[3] == "kV") ch.unit = Unit::kV;
    else if (f[3] == "kA") ch.unit = Unit::kA;
    else throw MalformedConfig("bad unit: " + std::string(f[3]));
    auto mult = parse_number<double>(f[4]);
    auto offset = parse_number<double>(f[5]);
    if (!mult || !offset) throw MalformedConfig("bad scaling on channel " + ch.name);
    scales.push_back({*mult, *offset});
    rec.channels.push_back(std::move(ch));
  }

  std::size_t li = 2 + nch;
  if (!parse_number<double>(lines[li]))
    throw MalformedConfig("bad frequency line: " + std::string(lines[li]));
  ++li;
  auto rates = split_fields(lines[li]);
  if (rates.size() != 2) throw MalformedConfig("bad rates line: " + std::string(lines[li]));
  auto rate = parse_number<double>(rates[0]);
  auto endsample = parse_number<long long>(rates[1]);
  if (!rate || !(*rate > 0.0) || !endsample || *endsample < 1)
    throw MalformedConfig("bad rates line: " + std::string(lines[li]));
  rec.sample_rate = *rate;
  ++li;
  rec.start_time = std::string(lines[li]);  // first timestamp line, verbatim
  // second timestamp line (trigger) is required but not retained
  if (li + 1 >= lines.size()) throw MalformedConfig("missing trigger timestamp line");

  const std::size_t expected = static_cast<std::size_t>(*endsample);
  for (auto& ch : rec.channels) ch.values.reserve(expected);

  auto rows = split_lines(dat_text);
  long long first_us = 0, last_us = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto f = split_fields(rows[r]);
    if (f.size() != 2 + nch)
      throw ChannelCountMismatch("dat row " + std::to_string(r + 1) + " carries " +
                                 std::to_string(f.size() > 2 ? f.size() - 2 : 0) +
                                 " values, expected " + std::to_string(nch));
    if (!parse_number<long long>(f[0]))
      throw MalformedConfig("bad dat index on row " + std::to_string(r + 1));
    auto us = parse_number<long long>(f[1]);
    if (!us) throw MalformedConfig("bad dat timestamp on row " + std::to_string(r + 1));
    if (r == 0) first_us = *us;
    last_us = *us;
    for (std::size_t c = 0; c < nch; ++c) {
      auto raw = parse_number<double>(f[2 + c]);
      if (!raw) throw MalformedConfig("bad sample on row " + std::to_string(r + 1));
      rec.channels[c].values.push_back(*raw * scales[c].mult + scales[c].offset);
    }
  }
  rec.n_samples = rows.size();
  if (rec.n_samples != expected)
    throw SampleCountMismatch("dat has " + std::to_string(rec.n_samples) +
                              " rows, cfg declares " + std::to_string(expected));
  if (rec.n_samples >= 2) {
    // the microsecond column is authoritative; the cfg rate must agree to 1%
    double avg_dt_us = static_cast<double>(last_us - first_us) / static_cast<double>(rec.n_samples - 1);
    double expect_us = 1e6 / rec.sample_rate;
    if (std::abs(avg_dt_us - expect_us) > 0.01 * expect_us)
      throw SampleCountMismatch("dat timestamps disagree with cfg sample rate by >1%");
  }
  rec.validate();
  return rec;
}

// Serializes with unit multiplier/offset; output is byte-stable and re-parses
// to a field-equal Recording.
inline std::pair<std::string, std::string> write_comtrade(const Recording& rec) {
  using detail::format_double;
  if (rec.channels.empty()) throw EmptyRecording("refusing to write a recording with no channels");
  rec.validate();

  std::string cfg;
  cfg += rec.station_id;
  cfg += ",1,1999\n";
  cfg += std::to_string(rec.channels.size()) + "," + std::to_string(rec.channels.size()) + "A\n";
  for (std::size_t i = 0; i < rec.channels.size(); ++i) {
    const auto& ch = rec.channels[i];
    cfg += std::to_string(i + 1) + "," + ch.name + "," + std::string(to_string(ch.phase)) +
           "," + std::string(to_string(ch.unit)) + ",1,0\n";
  }
  cfg += "60\n";
  cfg += format_double(rec.sample_rate) + "," + std::to_string(rec.n_samples) + "\n";
  cfg += rec.start_time + "\n";
  cfg += rec.start_time + "\n";

  std::string dat;
  dat.reserve(rec.n_samples * (16 + 24 * rec.channels.size()));
  for (std::size_t n = 0; n < rec.n_samples; ++n) {
    dat += std::to_string(n + 1);
    dat += ',';
    dat += std::to_string(static_cast<long long>(std::llround(
        static_cast<double>(n) * 1e6 / rec.sample_rate)));
    for (const auto& ch : rec.channels) {
      dat += ',';
      dat += format_double(ch.values[n]);
    }
    dat += '\n';
  }
  return {std::move(cfg), std::move(dat)};
}

// --- phasor extraction ------------------------------------------------------

namespace detail {

inline std::size_t samples_per_cycle(double sample_rate, double fundamental_hz) {
  if (!(fundamental_hz > 0.0) || !(sample_rate > 0.0))
    throw IncommensurateRate("sample rate and fundamental must be > 0");
  double ratio = sample_rate / fundamental_hz;
  auto n = static_cast<long long>(std::llround(ratio));
  if (n < 4 || std::abs(ratio - static_cast<double>(n)) > 1e-6)
    throw IncommensurateRate("sample rate must be an integer multiple of the fundamental");
  return static_cast<std::size_t>(n);
}

// Sliding one-cycle DFT at the fundamental, rectangular window, one output per
// sample once a full cycle is available. The running sum is recomputed from
// scratch every few cycles to bound floating-point drift.
inline std::vector<Phasor> sliding_fundamental(const std::vector<double>& x,
                                               std::size_t cycle) {
  const std::size_t n = x.size();
  std::vector<Phasor> out;
  if (n < cycle) return out;
  out.reserve(n - cycle + 1);

  std::vector<std::complex<double>> w(cycle);
  for (std::size_t m = 0; m < cycle; ++m) {
    double ang = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(cycle);
    w[m] = {std::cos(ang), -std::sin(ang)};
  }
  const double scale = std::numbers::sqrt2 / static_cast<double>(cycle);
  const std::size_t refresh = cycle * 8;

  auto window_sum = [&](std::size_t end) {  // samples (end-cycle+1 .. end)
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t m = end + 1 - cycle; m <= end; ++m) acc += x[m] * w[m % cycle];
    return acc;
  };

  std::complex<double> acc = window_sum(cycle - 1);
  out.push_back(Phasor::from_complex(acc * scale));
  for (std::size_t end = cycle; end < n; ++end) {
    if ((end - (cycle - 1)) % refresh == 0)
      acc = window_sum(end);
    else
      acc += (x[end] - x[end - cycle]) * w[end % cycle];
    out.push_back(Phasor::from_complex(acc * scale));
  }
  return out;
}

}  // namespace detail

// Extracts per-phase fundamental phasors for the three named voltage (or
// current) channels. Magnitudes are RMS in the channel unit; output instants
// start at the end of the first full cycle.
inline PhasorSeries extract_phasors(const Recording& rec,
                                    const std::array<std::string, 3>& channel_names,
                                    double fundamental_hz = 60.0) {
  const std::size_t cycle = detail::samples_per_cycle(rec.sample_rate, fundamental_hz);
  if (rec.n_samples < cycle)
    throw IncommensurateRate("recording shorter than one fundamental cycle");

  PhasorSeries series;
  series.fundamental_hz = fundamental_hz;
  series.times.reserve(rec.n_samples - cycle + 1);
  for (std::size_t n = cycle - 1; n < rec.n_samples; ++n)
    series.times.push_back(static_cast<double>(n) / rec.sample_rate);
  for (int p = 0; p < 3; ++p) {
    const auto& ch = rec.channel(channel_names[static_cast<std::size_t>(p)]);
    series.phase[static_cast<std::size_t>(p)] = detail::sliding_fundamental(ch.values, cycle);
  }
  return series;
}

// (1/3)(a-phase + a*b-phase + a^2*c-phase), a = 1/_120 deg.
inline Phasor positive_sequence(const Phasor& pa, const Phasor& pb, const Phasor& pc) {
  static const std::complex<double> a = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
  return Phasor::from_complex((pa.to_complex() + a * pb.to_complex() + a * a * pc.to_complex()) / 3.0);
}

inline SequenceTrace positive_sequence_series(const PhasorSeries& s) {
  SequenceTrace out;
  out.times = s.times;
  out.fundamental_hz = s.fundamental_hz;
  out.values.reserve(s.times.size());
  for (std::size_t i = 0; i < s.times.size(); ++i)
    out.values.push_back(positive_sequence(s.phase[0][i], s.phase[1][i], s.phase[2][i]));
  return out;
}

// Three-phase reactive power in MVAR from phase-RMS voltage (kV) and RMS
// current (kA) phasors. Positive = capacitive injection into the grid.
inline double compute_q(const Phasor& v, const Phasor& i, Orientation orientation) {
  double q = 3.0 * v.magnitude * i.magnitude * std::sin(v.angle - i.angle);
  return orientation == Orientation::out_of_device ? q : -q;
}

// Finds the A/B/C-tagged channels of the given unit, in phase order.
inline std::array<std::string, 3> find_phase_channels(const Recording& rec, Unit unit) {
  std::array<std::string, 3> names;
  std::array<bool, 3> found{false, false, false};
  for (const auto& ch : rec.channels) {
    if (ch.unit != unit) continue;
    int idx = -1;
    if (ch.phase == PhaseTag::A) idx = 0;
    else if (ch.phase == PhaseTag::B) idx = 1;
    else if (ch.phase == PhaseTag::C) idx = 2;
    if (idx >= 0 && !found[static_cast<std::size_t>(idx)]) {
      names[static_cast<std::size_t>(idx)] = ch.name;
      found[static_cast<std::size_t>(idx)] = true;
    }
  }
  if (!(found[0] && found[1] && found[2]))
    throw MissingPhaseChannels(std::string("no complete A/B/C ") +
                               std::string(to_string(unit)) + " channel set");
  return names;
}

// Prepends a balanced steady-state tone to the voltage phase channels (other
// channels are zero-padded). The synthetic tone's phase is taken from the
// first recorded cycle so the splice is continuous.
inline Recording prepend_prelude(const Recording& rec, double duration_s = 10.0,
                                 double nominal_pu = 1.0, double v_base_kv = 230.0,
                                 double fundamental_hz = 60.0) {
  if (duration_s < 0.0) throw RangeError("prelude duration must be >= 0");
  auto v_names = find_phase_channels(rec, Unit::kV);
  if (duration_s == 0.0) return rec;

  const std::size_t cycle = detail::samples_per_cycle(rec.sample_rate, fundamental_hz);
  if (rec.n_samples < cycle)
    throw IncommensurateRate("recording shorter than one fundamental cycle");
  const auto n_pre = static_cast<std::size_t>(std::ceil(duration_s * rec.sample_rate));
  if (n_pre == 0) return rec;

  std::array<double, 3> splice_angle{};
  for (int p = 0; p < 3; ++p) {
    const auto& ch = rec.channel(v_names[static_cast<std::size_t>(p)]);
    std::vector<double> first_cycle(ch.values.begin(),
                                    ch.values.begin() + static_cast<std::ptrdiff_t>(cycle));
    splice_angle[static_cast<std::size_t>(p)] =
        detail::sliding_fundamental(first_cycle, cycle).front().angle;
  }

  Recording out = rec;
  out.n_samples = rec.n_samples + n_pre;
  const double amp = std::numbers::sqrt2 * nominal_pu * v_base_kv / std::sqrt(3.0);
  const double w = 2.0 * std::numbers::pi * fundamental_hz;
  for (auto& ch : out.channels) {
    std::vector<double> padded(n_pre, 0.0);
    int p = -1;
    for (int k = 0; k < 3; ++k)
      if (ch.name == v_names[static_cast<std::size_t>(k)]) p = k;
    if (p >= 0) {
      for (std::size_t k = 0; k < n_pre; ++k) {
        double t = (static_cast<double>(k) - static_cast<double>(n_pre)) / rec.sample_rate;
        padded[k] = amp * std::cos(w * t + splice_angle[static_cast<std::size_t>(p)]);
      }
    }
    padded.insert(padded.end(), ch.values.begin(), ch.values.end());
    ch.values = std::move(padded);
  }
  return out;
}

}  // namespace sceval::records
