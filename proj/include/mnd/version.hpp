#pragma once

namespace mnd {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace mnd
