#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace caspgrid {

struct FdReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;
  std::string to_string() const;
};

/// Central-difference gradient check. `f` must be a pure scalar function of
/// theta (double precision). `analytic_grad` is df/dtheta at theta as produced
/// by the implementation under test. Up to `max_coords` coordinates are
/// sampled without replacement; entries where `coord_mask` is 0 are skipped
/// (bilinear-knot exclusion and similar).
FdReport finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& theta,
                           const std::vector<double>& analytic_grad, double h,
                           double tolerance, int64_t max_coords, std::mt19937& rng,
                           const std::vector<uint8_t>* coord_mask = nullptr);

}  // namespace caspgrid
