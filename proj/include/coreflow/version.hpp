#pragma once

namespace coreflow {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace coreflow
