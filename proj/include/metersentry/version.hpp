#pragma once

namespace metersentry {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace metersentry
