#pragma once

namespace mpox {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kApiVersion = "v1";

}  // namespace mpox
