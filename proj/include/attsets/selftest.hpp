// SPDX-License-Identifier: Apache-2.0
//
// Invariant suite run by `attsets selftest`.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attsets::selftest {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Runs every named check; exceptions inside a check count as failures.
std::vector<CheckResult> run_all(std::uint64_t seed = 0);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace attsets::selftest
