// SPDX-License-Identifier: Apache-2.0
//
// `dmoe` command-line driver. Kept out of main() so tests can run commands
// in-process.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dmoe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidationFailed = 1;
inline constexpr int kExitDiverged = 2;
inline constexpr int kExitUsage = 64;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dmoe::cli
