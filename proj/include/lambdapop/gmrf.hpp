#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lambdapop/genealogy.hpp"
#include "lambdapop/rng.hpp"

namespace lambdapop {

// Regular time grid x_1 = 0 < ... < x_D carrying piecewise-constant log
// effective population size, one value per cell (x_d, x_{d+1}].
struct SkyGrid {
  std::vector<double> points;
  Eigen::VectorXd log_ne;

  int n_cells() const { return static_cast<int>(points.size()) - 1; }
  double spacing() const { return points[1] - points[0]; }
  int cell_index(double t) const;
  double ne_at(double t) const { return std::exp(log_ne[cell_index(t)]); }
};

// Regular grid spanning [0, tmrca] with a flat initial trajectory set to the
// average pairwise exposure per coalescent event.
SkyGrid build_grid(const CoalescentData& data, int n_points = 100);

// Intrinsic first-order random-walk smoothing prior on the cell values, with
// a Gamma(tau_shape, tau_rate) hyperprior on the precision multiplier tau.
class GmrfPrior {
 public:
  GmrfPrior(int dim, double spacing, double tau_shape = 1e-3, double tau_rate = 1e-3,
            double ridge = 1e-8);

  int dim() const { return dim_; }
  int rank() const { return dim_ - 1; }
  double tau_shape() const { return tau_shape_; }
  double tau_rate() const { return tau_rate_; }

  const Eigen::MatrixXd& precision() const { return q_; }  // unridged structure matrix
  Eigen::MatrixXd regularized_precision() const;           // Q + ridge * I

  double quad_form(const Eigen::VectorXd& gamma) const;          // gamma' Q gamma, O(dim)
  Eigen::VectorXd apply_precision(const Eigen::VectorXd& gamma) const;  // Q gamma, O(dim)

  // log density of gamma given tau, up to the tau-free additive constant;
  // optionally adds the tau hyperprior term (shape-1) log tau - rate * tau.
  double log_density(const Eigen::VectorXd& gamma, double tau,
                     bool include_tau_prior = false) const;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& gamma, double tau) const;

  // Conjugate Gibbs draw: tau | gamma ~ Gamma(shape + rank/2, rate + quad/2).
  double sample_tau(const Eigen::VectorXd& gamma, Rng& rng) const;

  // Eigendecomposition of Q (ascending; the intrinsic null eigenvalue is
  // snapped to exactly zero) for split Hamiltonian flows.
  const Eigen::MatrixXd& eigenvectors() const { return eigvec_; }
  const Eigen::VectorXd& eigenvalues() const { return eigval_; }

 private:
  int dim_;
  double spacing_;
  double tau_shape_, tau_rate_, ridge_;
  Eigen::MatrixXd q_;
  Eigen::MatrixXd eigvec_;
  Eigen::VectorXd eigval_;
};

}  // namespace lambdapop
