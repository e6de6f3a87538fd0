#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lambdapop/genealogy.hpp"
#include "lambdapop/gmrf.hpp"
#include "lambdapop/lambda_rates.hpp"

namespace lambdapop {

// Sufficient statistics of the coalescent likelihood on a grid: per-cell
// exposure spans (which lineage count was extant, for how long) and the
// per-event terms. The span/event structure depends only on (data, grid);
// the rate-dependent caches are refreshed by rebuild_rates, so sweeping a
// family of measures over a fixed genealogy stays cheap.
struct ExposureTable {
  struct Span {
    int cell;
    int lineages;
    double duration;
  };

  // measure-independent structure
  std::vector<Span> spans;             // only spans with >= 2 lineages
  std::vector<int> event_cell;         // grid cell containing each event
  std::vector<int> event_lineages;     // lineages just before the event
  std::vector<int> event_block;        // merger size
  std::vector<double> event_log_choose;
  std::vector<int> event_count;        // events per cell
  int n_cells = 0;
  int max_lineages = 0;

  // rate-dependent caches
  std::vector<double> exposure;        // E_d = sum of lambda_A * duration per cell
  std::vector<double> event_log_rate;  // log C(A,m) + log lambda_{A,m} per event

  void rebuild_rates(const RateTable& rates);
};

ExposureTable build_exposure(const CoalescentData& data, const SkyGrid& grid,
                             const LambdaMeasure& measure);

// log p(genealogy | gamma, measure) for piecewise-constant log Ne = gamma:
//   sum_events [log C(A,m) + log lambda_{A,m} - gamma_d(event)]
//   - sum_cells E_d exp(-gamma_d).
double log_likelihood(const ExposureTable& table, const Eigen::VectorXd& gamma);

// d/d gamma_d = E_d exp(-gamma_d) - (#events in cell d)
Eigen::VectorXd grad_log_likelihood(const ExposureTable& table, const Eigen::VectorXd& gamma);

// Topology-only pseudolikelihood: sum over events of the log block-size
// probability given the extant lineage count. No trajectory involved.
double block_size_log_pseudolik(const CoalescentData& data, const RateTable& rates);
double block_size_log_pseudolik(const CoalescentData& data, const LambdaMeasure& measure);

}  // namespace lambdapop
