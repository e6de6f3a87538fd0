#include "lambdapop/metrics.hpp"

#include <cmath>

#include "lambdapop/errors.hpp"

namespace lambdapop {

TrajectoryScore score_trajectory(const TrajectorySummary& est, const Trajectory& truth) {
  if (est.grid_points.size() < 2) throw InputError("empty trajectory estimate");
  const std::size_t d = est.grid_points.size() - 1;  // cells
  if (est.median.size() != d || est.lower.size() != d || est.upper.size() != d)
    throw InputError("trajectory summary arrays disagree in length");

  TrajectoryScore s;
  s.grid_size = static_cast<int>(d);
  for (std::size_t i = 0; i < d; ++i) {
    // the estimate is a step function per cell; probe the truth at midpoints
    const double nt = truth.value(0.5 * (est.grid_points[i] + est.grid_points[i + 1]));
    if (!(nt > 0.0)) throw InputError("true trajectory must be positive on the grid");
    const double err = est.median[i] - nt;
    s.coverage += (est.upper[i] > nt && nt > est.lower[i]) ? 1.0 : 0.0;
    s.bias += err / nt;
    s.deviance += std::abs(err) / nt;
    s.mse += err * err / nt;
  }
  s.coverage /= d;
  s.bias /= d;
  s.deviance /= d;
  s.mse /= d;
  return s;
}

AlphaScore score_alpha(const std::vector<double>& estimates, double truth) {
  if (estimates.empty()) throw InputError("no alpha estimates to score");
  AlphaScore s;
  double sq = 0.0;
  for (double a : estimates) {
    s.mean += a;
    sq += (a - truth) * (a - truth);
  }
  s.mean /= estimates.size();
  s.bias = s.mean - truth;
  s.mse = sq / estimates.size();
  return s;
}

}  // namespace lambdapop
