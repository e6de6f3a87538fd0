#pragma once

// Performance measures for trajectory estimates and scalar alpha summaries.

#include <vector>

#include "lambdapop/estimators.hpp"
#include "lambdapop/simulator.hpp"

namespace lambdapop {

struct TrajectoryScore {
  double coverage = 0.0;  // fraction of grid points with upper > truth > lower (strict)
  double bias = 0.0;      // mean relative error of the median
  double deviance = 0.0;  // mean absolute relative error
  double mse = 0.0;       // mean squared error divided by truth
  int grid_size = 0;
};

// Scores an estimate against the true trajectory at the estimate's own grid points.
// Throws InputError if the truth is nonpositive anywhere on the grid.
TrajectoryScore score_trajectory(const TrajectorySummary& est, const Trajectory& truth);

struct AlphaScore {
  double mean = 0.0;
  double bias = 0.0;  // mean - truth
  double mse = 0.0;   // mean squared deviation from truth
};

AlphaScore score_alpha(const std::vector<double>& estimates, double truth);

}  // namespace lambdapop
