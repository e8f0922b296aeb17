#pragma once

namespace adetag::cli {

inline constexpr const char* kToolkitVersion = ADETAG_VERSION;

}  // namespace adetag::cli
