#pragma once

namespace evuda {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace evuda
