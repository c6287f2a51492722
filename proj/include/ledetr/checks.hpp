#pragma once

// End-to-end invariant suites behind the `check` command.

#include <iosfwd>
#include <string>
#include <vector>

namespace ledetr {

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// na-oracle, global, grad, prefix, shapes, determinism, all.
const std::vector<std::string>& check_suites();

/// Throws ConfigError for an unknown suite.
std::vector<CheckLine> run_check_suite(const std::string& suite);

/// Prints one line per check; returns true when all passed.
bool print_checks(std::ostream& os, const std::vector<CheckLine>& lines);

}  // namespace ledetr
