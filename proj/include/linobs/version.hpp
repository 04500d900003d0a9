#pragma once

namespace linobs {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace linobs
