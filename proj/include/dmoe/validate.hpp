// SPDX-License-Identifier: Apache-2.0
//
// Self-check suites behind `dmoe validate`.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dmoe {

struct ValidateOptions {
  std::optional<std::string> filter;  // substring of suite names
  std::uint64_t seed = 0;             // base seed; case i uses seed + i
  std::size_t cases = 0;              // 0 keeps each suite's default count
  bool inject_fault = false;          // test hook: corrupts one sdd output block
};

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::optional<std::uint64_t> failing_seed;
  std::string detail;
};

std::vector<std::string> suite_names();

// Runs every suite whose name contains options.filter. Throws
// std::invalid_argument when the filter matches nothing.
std::vector<SuiteResult> run_validation(const ValidateOptions& options);

// One line per suite, e.g. "PASS sdd_oracle cases=200 max_error=1.110e-16 tol=1e-10".
void print_report(std::ostream& os, const std::vector<SuiteResult>& results);

bool all_passed(const std::vector<SuiteResult>& results);

}  // namespace dmoe
