#pragma once

#include <string>
#include <vector>

#include "caspgrid/gradcheck.hpp"

namespace caspgrid {

struct GradSuiteEntry {
  std::string name;
  FdReport report;
};

/// Central-difference checks for every differentiable kernel plus the
/// end-to-end grid loss on a small configuration, all in double precision.
std::vector<GradSuiteEntry> run_gradient_suite(double h = 1e-5, double tol = 1e-4,
                                               uint64_t seed = 7,
                                               bool include_end_to_end = true);

inline bool all_passed(const std::vector<GradSuiteEntry>& entries) {
  for (const auto& e : entries)
    if (!e.report.pass) return false;
  return !entries.empty();
}

}  // namespace caspgrid
