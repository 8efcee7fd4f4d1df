#pragma once

namespace srsm {

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace srsm
