#pragma once

namespace idarts {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace idarts
