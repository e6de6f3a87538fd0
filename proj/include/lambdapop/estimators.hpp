#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lambdapop/genealogy.hpp"
#include "lambdapop/gmrf.hpp"
#include "lambdapop/likelihood.hpp"
#include "lambdapop/rng.hpp"

namespace lambdapop {

struct FitConfig {
  int grid_points = 100;  // D grid points, D-1 cells
  int iterations = 20000;
  double burn_frac = 0.10;

  // HMC
  int leapfrog_steps = 20;
  double step_size = 0.0;  // 0 = dual-averaging auto-tune during burn-in
  double target_accept = 0.7;
  double mass = 1.0;
  bool split_hmc = true;  // exact Gaussian-prior flow; false = plain leapfrog

  // measure-parameter grid: intervals of width alpha_width covering (0, 2]
  int alpha_intervals = 400;
  double alpha_width = 0.005;
  double alpha_lo = 0.005, alpha_hi = 2.0;  // 1-D search range
  double alpha_tol = 1e-6;

  // smoothing prior
  double tau_shape = 1e-3, tau_rate = 1e-3, ridge = 1e-8;

  int newton_max_iter = 200;
  double newton_tol = 1e-8;
  int hybrid_max_iter = 50;
  double hybrid_tol = 1e-4;

  std::uint64_t seed = 1;

  // diagnostics switches
  bool likelihood_enabled = true;       // false = prior-only sampling
  std::optional<double> fixed_tau;      // freeze the precision Gibbs update
  std::optional<double> fixed_alpha;    // freeze the measure at beta(alpha)
  bool store_gamma_draws = false;       // keep the full gamma chain in the result

  void validate() const;
};

struct TrajectorySummary {
  std::vector<double> grid_points;            // D points
  std::vector<double> median, lower, upper;   // Ne per cell (D-1), 95% band
};

struct FitResult {
  std::string method;
  double alpha = 0.0;  // bs-mle argmax / hybrid final / mcmc posterior mean
  bool alpha_at_boundary = false;
  double alpha_median = 0.0;
  double tau = 0.0;  // mode (laplace paths) or posterior mean (mcmc)
  TrajectorySummary trajectory;
  double log_likelihood_at_estimate = 0.0;

  // mcmc payload
  std::vector<double> alpha_draws, tau_draws;
  Eigen::MatrixXd gamma_draws;  // post burn-in, only when requested

  // diagnostics
  double accept_rate = 0.0, step_size = 0.0;
  double ess_alpha = 0.0, ess_gamma_probe = 0.0;
  int iterations_used = 0;
  bool converged = true;
  std::vector<double> alpha_trace;  // hybrid outer iterates
};

// Kingman limit guard: alpha >= 1.9999 maps to the point mass at 0.
LambdaMeasure measure_for_alpha(double alpha);

// Topology-only estimator: maximizes the block-size pseudolikelihood over
// alpha in [lo, hi] by golden-section search (alpha = 2 evaluates the Kingman
// limit exactly). Sets *at_boundary when the maximizer sits on an endpoint.
double block_size_mle(const CoalescentData& data, double lo = 0.005, double hi = 2.0,
                      double tol = 1e-6, bool* at_boundary = nullptr);

struct LaplaceResult {
  SkyGrid grid;
  Eigen::VectorXd gamma, gamma_sd;
  double tau = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  double objective = 0.0;
  bool converged = false;

  TrajectorySummary summary() const;
};

// Gaussian approximation of the trajectory posterior at a fixed measure:
// Newton ascent of log-likelihood + GMRF prior over gamma at fixed tau, with
// tau chosen by maximizing the Laplace-approximated marginal (the
// log-determinant term keeps tau away from the degenerate oversmoothed mode
// that joint maximization falls into).
LaplaceResult laplace_fit(const CoalescentData& data, const LambdaMeasure& measure,
                          const FitConfig& cfg = {});

// Discretized conditional of the Beta family parameter given the trajectory.
// Precomputes, per interval midpoint, the total rates at each distinct
// lineage count and the per-event rate terms, so a weight sweep is a small
// matrix-vector product.
class AlphaConditional {
 public:
  AlphaConditional(const ExposureTable& table, int n_intervals = 400, double width = 0.005);

  int n_intervals() const { return static_cast<int>(event_const_.size()); }
  double width() const { return width_; }
  double midpoint(int m) const { return width_ * (m + 0.5); }  // m is 0-based

  // unnormalized log-likelihood at each midpoint given gamma
  std::vector<double> log_weights(const Eigen::VectorXd& gamma) const;
  // normalized interval probabilities given gamma
  std::vector<double> probabilities(const Eigen::VectorXd& gamma) const;
  double sample_from(const std::vector<double>& probs, Rng& rng) const;
  double sample(const Eigen::VectorXd& gamma, Rng& rng) const;

 private:
  double width_;
  std::vector<int> event_cells_;
  std::vector<std::vector<std::pair<int, double>>> durations_;  // per distinct count: (cell, dur)
  Eigen::MatrixXd total_rate_;  // n_intervals x n_distinct_counts
  std::vector<double> event_const_;
};

// block_size_mle followed by a plug-in Laplace trajectory at the estimate.
FitResult fit_bs_mle(const CoalescentData& data, const FitConfig& cfg = {});

// Alternates laplace_fit with a 1-D search of the full log-likelihood in
// alpha, from a block-size-MLE start. On oscillation returns the
// best-likelihood iterate with converged = false.
FitResult hybrid_fit(const CoalescentData& data, const FitConfig& cfg = {});

// Metropolis-within-Gibbs: HMC gamma update, conjugate Gibbs tau update,
// gridded alpha update with an ExposureTable rate rebuild.
FitResult mcmc_fit(const CoalescentData& data, const FitConfig& cfg = {});

// |H(end) - H(start)| of a single HMC trajectory from a seeded momentum draw;
// diagnostic hook for integrator-order checks.
double hmc_energy_error(const ExposureTable& table, const GmrfPrior& prior,
                        const Eigen::VectorXd& gamma, double tau, double eps, int steps,
                        bool split, std::uint64_t seed);

// Geyer initial-positive-sequence effective sample size.
double effective_sample_size(const std::vector<double>& draws);

}  // namespace lambdapop
