#include "lambdapop/gmrf.hpp"

#include <algorithm>
#include <cmath>

#include "lambdapop/errors.hpp"

namespace lambdapop {

int SkyGrid::cell_index(double t) const {
  auto it = std::lower_bound(points.begin(), points.end(), t);
  int idx = static_cast<int>(it - points.begin()) - 1;
  return std::clamp(idx, 0, n_cells() - 1);
}

SkyGrid build_grid(const CoalescentData& data, int n_points) {
  data.validate();
  if (n_points < 3) throw InputError("grid needs at least 3 points");
  const double horizon = data.tmrca();
  if (horizon <= 0.0) throw InputError("cannot grid a genealogy without coalescent events");

  SkyGrid g;
  g.points.resize(n_points);
  for (int i = 0; i < n_points; ++i)
    g.points[i] = horizon * static_cast<double>(i) / (n_points - 1);
  g.points.back() = horizon;

  // flat start: average pairwise exposure per event
  LineageStep steps = LineageStep::from(data);
  double pair_exposure = 0.0;
  for (std::size_t i = 0; i < steps.values.size(); ++i) {
    double a = steps.values[i];
    pair_exposure += 0.5 * a * (a - 1.0) * (steps.breakpoints[i + 1] - steps.breakpoints[i]);
  }
  double level = std::max(pair_exposure / data.n_events(), 1e-12);
  g.log_ne = Eigen::VectorXd::Constant(n_points - 1, std::log(level));
  return g;
}

GmrfPrior::GmrfPrior(int dim, double spacing, double tau_shape, double tau_rate, double ridge)
    : dim_(dim), spacing_(spacing), tau_shape_(tau_shape), tau_rate_(tau_rate), ridge_(ridge) {
  if (dim < 2) throw InputError("random-walk prior needs at least 2 cells");
  if (!(spacing > 0.0)) throw InputError("grid spacing must be positive");
  if (!(tau_shape > 0.0) || !(tau_rate > 0.0)) throw InputError("tau hyperprior must be positive");

  q_ = Eigen::MatrixXd::Zero(dim, dim);
  const double w = 1.0 / spacing_;
  for (int i = 0; i + 1 < dim; ++i) {
    q_(i, i) += w;
    q_(i + 1, i + 1) += w;
    q_(i, i + 1) -= w;
    q_(i + 1, i) -= w;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(q_);
  if (solver.info() != Eigen::Success) throw NumericalError("precision eigendecomposition failed");
  eigvec_ = solver.eigenvectors();
  eigval_ = solver.eigenvalues();
  const double snap = 1e-10 * eigval_[dim - 1];
  for (int i = 0; i < dim; ++i)
    if (eigval_[i] < snap) eigval_[i] = 0.0;
}

Eigen::MatrixXd GmrfPrior::regularized_precision() const {
  Eigen::MatrixXd out = q_;
  out.diagonal().array() += ridge_;
  return out;
}

double GmrfPrior::quad_form(const Eigen::VectorXd& gamma) const {
  if (gamma.size() != dim_) throw InputError("gamma length does not match prior dimension");
  double s = 0.0;
  for (int i = 0; i + 1 < dim_; ++i) {
    double d = gamma[i + 1] - gamma[i];
    s += d * d;
  }
  return s / spacing_;
}

Eigen::VectorXd GmrfPrior::apply_precision(const Eigen::VectorXd& gamma) const {
  if (gamma.size() != dim_) throw InputError("gamma length does not match prior dimension");
  Eigen::VectorXd out(dim_);
  const double w = 1.0 / spacing_;
  for (int i = 0; i < dim_; ++i) {
    double v = 0.0;
    if (i > 0) v += gamma[i] - gamma[i - 1];
    if (i + 1 < dim_) v += gamma[i] - gamma[i + 1];
    out[i] = w * v;
  }
  return out;
}

double GmrfPrior::log_density(const Eigen::VectorXd& gamma, double tau,
                              bool include_tau_prior) const {
  if (!(tau > 0.0)) throw InputError("tau must be positive");
  double out = 0.5 * rank() * std::log(tau) - 0.5 * tau * quad_form(gamma);
  if (include_tau_prior) out += (tau_shape_ - 1.0) * std::log(tau) - tau_rate_ * tau;
  return out;
}

Eigen::VectorXd GmrfPrior::grad_log_density(const Eigen::VectorXd& gamma, double tau) const {
  return -tau * apply_precision(gamma);
}

double GmrfPrior::sample_tau(const Eigen::VectorXd& gamma, Rng& rng) const {
  const double shape = tau_shape_ + 0.5 * rank();
  const double rate = tau_rate_ + 0.5 * quad_form(gamma);
  std::gamma_distribution<double> draw(shape, 1.0 / rate);
  double tau = draw(rng);
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw NumericalError("tau draw collapsed to a non-positive value");
  return tau;
}

}  // namespace lambdapop
