#pragma once

namespace fluidswarm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fluidswarm
