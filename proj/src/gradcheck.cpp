#include "caspgrid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "caspgrid/errors.hpp"

namespace caspgrid {

std::string FdReport::to_string() const {
  std::ostringstream os;
  os << (pass ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err
     << " checked=" << checked << " tol=" << tolerance;
  if (worst_coord >= 0)
    os << " worst@" << worst_coord << " analytic=" << worst_analytic
       << " numeric=" << worst_numeric;
  return os.str();
}

FdReport finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& theta,
                           const std::vector<double>& analytic_grad, double h,
                           double tolerance, int64_t max_coords, std::mt19937& rng,
                           const std::vector<uint8_t>* coord_mask) {
  if (theta.size() != analytic_grad.size())
    throw_error(ErrorKind::Shape, "finite_diff_check: gradient length mismatch");
  std::vector<size_t> coords;
  coords.reserve(theta.size());
  for (size_t i = 0; i < theta.size(); ++i)
    if (!coord_mask || (*coord_mask)[i]) coords.push_back(i);
  if (static_cast<int64_t>(coords.size()) > max_coords) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<size_t>(max_coords));
    std::sort(coords.begin(), coords.end());
  }

  FdReport report;
  report.tolerance = tolerance;
  std::vector<double> probe = theta;
  for (size_t i : coords) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double fp = f(probe);
    probe[i] = saved - h;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw_error(ErrorKind::Numerical,
                  "finite_diff_check: non-finite objective at coordinate " +
                      std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grad[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    const double rel = std::abs(numeric - analytic) / denom;
    ++report.checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_coord = static_cast<int64_t>(i);
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  report.pass = report.checked > 0 && report.max_rel_err <= tolerance;
  return report;
}

}  // namespace caspgrid
