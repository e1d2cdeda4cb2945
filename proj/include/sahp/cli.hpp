#pragma once

#include <string>
#include <vector>

namespace sahp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one subcommand (simulate | fit-hp | train | evaluate | predict | qq |
/// attn | reproduce). Every run writes its fully-resolved configuration next
/// to its outputs; 0 on success, 2 on usage errors, 3 on data errors, 4 on
/// numeric failures.
int dispatch(const std::vector<std::string>& args);

}  // namespace sahp::cli
