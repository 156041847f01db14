#pragma once

namespace sceval {
inline constexpr const char* kVersion = "0.1.0";
}
