#pragma once

namespace seme {

inline constexpr const char* kVersion = "0.1.0";

} // namespace seme
