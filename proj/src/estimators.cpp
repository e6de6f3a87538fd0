#include "lambdapop/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <sstream>

#include "lambdapop/errors.hpp"

namespace lambdapop {

namespace {

constexpr double kKingmanGuard = 1.9999;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct GoldenResult {
  double x, fx;
};

// Golden-section maximizer on [lo, hi]; endpoints are checked too so boundary
// maxima are returned exactly.
template <typename F>
GoldenResult golden_max(F&& f, double lo, double hi, double tol) {
  const double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    }
  }
  GoldenResult best{0.5 * (a + b), f(0.5 * (a + b))};
  for (double cand : {lo, hi}) {
    double fc = f(cand);
    if (fc > best.fx) best = {cand, fc};
  }
  return best;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  double h = (sorted.size() - 1) * p;
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  double frac = h - lo;
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

}  // namespace

void FitConfig::validate() const {
  if (grid_points < 3) throw InputError("grid_points must be >= 3");
  if (iterations < 10) throw InputError("iterations must be >= 10");
  if (!(burn_frac > 0.0 && burn_frac < 1.0)) throw InputError("burn-in fraction must be in (0,1)");
  if (leapfrog_steps < 1) throw InputError("leapfrog_steps must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw InputError("target acceptance must be in (0,1)");
  if (!(mass > 0.0)) throw InputError("mass must be positive");
  if (alpha_intervals < 1 || !(alpha_width > 0.0) ||
      alpha_intervals * alpha_width > 2.0 + 1e-12)
    throw InputError("alpha grid must tile (0, 2]");
  if (!(alpha_lo > 0.0) || !(alpha_hi <= 2.0) || !(alpha_lo < alpha_hi))
    throw InputError("alpha search range must satisfy 0 < lo < hi <= 2");
  if (!(alpha_tol > 0.0)) throw InputError("alpha tolerance must be positive");
  if (!(tau_shape > 0.0) || !(tau_rate > 0.0) || !(ridge >= 0.0))
    throw InputError("prior hyperparameters must be positive");
  if (newton_max_iter < 1 || hybrid_max_iter < 1)
    throw InputError("iteration caps must be >= 1");
  if (fixed_tau && !(*fixed_tau > 0.0)) throw InputError("fixed tau must be positive");
  if (fixed_alpha && !(*fixed_alpha > 0.0 && *fixed_alpha <= 2.0))
    throw InputError("fixed alpha must be in (0, 2]");
}

LambdaMeasure measure_for_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 2.0)) throw InputError("alpha must lie in (0, 2]");
  if (alpha >= kKingmanGuard) return LambdaMeasure::kingman();
  return LambdaMeasure::beta(alpha);
}

double block_size_mle(const CoalescentData& data, double lo, double hi, double tol,
                      bool* at_boundary) {
  data.validate();
  if (data.n_events() == 0) throw InputError("need at least one coalescent event");
  int b_max = 2;
  for (int k = 0; k < data.n_events(); ++k)
    b_max = std::max(b_max, lineage_count(data, data.coal_times[k]));
  auto f = [&](double alpha) {
    return block_size_log_pseudolik(data, RateTable(measure_for_alpha(alpha), b_max));
  };
  GoldenResult best = golden_max(f, lo, hi, tol);
  // the Kingman guard flattens the objective on [1.9999, 2], so a maximizer
  // anywhere in that plateau is the upper boundary
  bool upper = hi - best.x < 5 * tol ||
               (hi >= 2.0 && measure_for_alpha(best.x).is_kingman());
  if (upper) best.x = hi;
  if (at_boundary != nullptr) *at_boundary = upper || (best.x - lo < 5 * tol);
  return best.x;
}

// ---------------------------------------------------------------------------
// Laplace approximation

namespace {

// Conditional mode of gamma at fixed tau. The likelihood terms are strictly
// concave in gamma and the prior quad is convex, so damped Newton converges
// from any start.
struct GammaMode {
  Eigen::VectorXd gamma;
  double value = -kInf;      // loglik - (tau/2) gamma' Q gamma at the mode
  double half_logdet = 0.0;  // 0.5 log det(tau Q_r + H_lik) at the mode
  double grad_norm = kInf;
  int iterations = 0;
};

GammaMode gamma_mode(const ExposureTable& table, const GmrfPrior& prior,
                     const Eigen::MatrixXd& q_ridged, double tau, Eigen::VectorXd gamma,
                     const FitConfig& cfg) {
  const int d = prior.dim();
  auto value = [&](const Eigen::VectorXd& g) {
    return log_likelihood(table, g) - 0.5 * tau * prior.quad_form(g);
  };

  double fcur = value(gamma);
  double grad_norm = kInf;
  // Tolerances scale with the likelihood curvature: the achievable gradient
  // floor grows with max_d E_d e^{-gamma_d}, and an absolute cutoff below it
  // would reject solutions that are at the mode to rounding accuracy.
  double hscale = 1.0;
  bool converged = false;
  Eigen::MatrixXd neg_hess(d, d);
  int it = 0, tiny_steps = 0;

  auto fill_hessian = [&](const Eigen::VectorXd& g) {
    neg_hess = tau * q_ridged;
    for (int i = 0; i < d; ++i) neg_hess(i, i) += table.exposure[i] * std::exp(-g[i]);
  };

  double decrement = kInf;  // grad' H^-1 grad, ~ twice the value gap to the mode
  for (; it < cfg.newton_max_iter; ++it) {
    Eigen::VectorXd grad =
        grad_log_likelihood(table, gamma) - tau * prior.apply_precision(gamma);
    grad_norm = grad.lpNorm<Eigen::Infinity>();
    hscale = 1.0;
    for (int i = 0; i < d; ++i)
      hscale = std::max(hscale, table.exposure[i] * std::exp(-gamma[i]));
    if (grad_norm <= cfg.newton_tol * hscale) {
      converged = true;
      break;
    }

    fill_hessian(gamma);
    // solve (-H) step = grad, escalating jitter until it is an ascent direction
    Eigen::VectorXd step;
    double jitter = 0.0;
    for (int tries = 0; tries < 12; ++tries) {
      Eigen::MatrixXd m = neg_hess;
      if (jitter > 0.0) m.diagonal().array() += jitter;
      Eigen::LLT<Eigen::MatrixXd> llt(m);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(grad);
        if (step.allFinite() && grad.dot(step) > 0.0) break;
      }
      jitter = (jitter == 0.0) ? 1e-8 * (1.0 + neg_hess.diagonal().maxCoeff()) : 10.0 * jitter;
      step.setZero();
    }
    if (step.size() == 0 || step.isZero()) break;

    // Affine-invariant stop: when stiff prior terms (large tau) put the
    // gradient's cancellation floor above any fixed norm cutoff, the decrement
    // still measures the remaining objective gap directly.
    decrement = grad.dot(step);
    if (decrement <= 2e-9) {
      converged = true;
      break;
    }

    double cap = step.lpNorm<Eigen::Infinity>();
    if (cap > 2.0) step *= 2.0 / cap;

    double t = 1.0;
    bool improved = false;
    double f_prev = fcur;
    for (int back = 0; back < 40; ++back) {
      Eigen::VectorXd g_try = gamma + t * step;
      double f_try = value(g_try);
      if (std::isfinite(f_try) && f_try > fcur) {
        gamma = std::move(g_try);
        fcur = f_try;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) {
      // stalled at the rounding floor
      converged = grad_norm <= 1e-6 * hscale || decrement <= 1e-7;
      break;
    }
    if (fcur - f_prev <= 1e-11 * (1.0 + std::abs(fcur))) {
      // successive accepted steps move the objective by rounding noise only
      if (++tiny_steps >= 2) {
        converged = grad_norm <= 1e-6 * hscale || decrement <= 1e-7;
        break;
      }
    } else {
      tiny_steps = 0;
    }
  }

  if (!converged && grad_norm > 1e-6 * hscale && decrement > 1e-7) {
    std::ostringstream os;
    os << "trajectory mode search did not converge in " << cfg.newton_max_iter
       << " iterations (gradient norm " << grad_norm << ", decrement " << decrement << ")";
    throw NumericalError(os.str());
  }

  fill_hessian(gamma);
  Eigen::LLT<Eigen::MatrixXd> llt(neg_hess);
  double half_logdet = 0.0;
  if (llt.info() == Eigen::Success) {
    for (int i = 0; i < d; ++i) half_logdet += std::log(llt.matrixL()(i, i));
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_hess);
    for (int i = 0; i < d; ++i)
      half_logdet += 0.5 * std::log(std::max(ldlt.vectorD()[i], 1e-300));
  }

  GammaMode out;
  out.gamma = std::move(gamma);
  out.value = fcur;
  out.half_logdet = half_logdet;
  out.grad_norm = grad_norm;
  out.iterations = it;
  return out;
}

// Empirical-Bayes Laplace pass: profile gamma at each tau and pick tau by the
// Laplace-approximated marginal. Maximizing gamma and log tau jointly instead
// runs away to the flat oversmoothed mode (the normalization term
// (rank/2) log tau is unbounded without the matching log-determinant), which
// is why the determinant stays in the tau objective here.
LaplaceResult laplace_impl(const ExposureTable& table, const GmrfPrior& prior, SkyGrid grid,
                           Eigen::VectorXd gamma, double theta, const FitConfig& cfg) {
  const int d = prior.dim();
  const Eigen::MatrixXd q_ridged = prior.regularized_precision();
  const double a0 = prior.tau_shape(), b0 = prior.tau_rate();
  const double half_rank = 0.5 * prior.rank();

  Eigen::VectorXd warm = std::move(gamma);
  long total_inner = 0;
  auto marginal = [&](double th) {
    double tau = std::exp(th);
    GammaMode m = gamma_mode(table, prior, q_ridged, tau, warm, cfg);
    warm = m.gamma;
    total_inner += m.iterations;
    return m.value + (half_rank + a0) * th - b0 * tau - m.half_logdet;
  };

  // coarse bracket, then golden section inside it
  constexpr double kScanLo = -10.0, kScanHi = 15.0, kScanStep = 2.5;
  double best_th = theta, best_val = marginal(theta);
  for (double th = kScanLo; th <= kScanHi + 1e-9; th += kScanStep) {
    double val = marginal(th);
    if (val > best_val) {
      best_val = val;
      best_th = th;
    }
  }
  GoldenResult top = golden_max(marginal, best_th - kScanStep, best_th + kScanStep, 1e-3);

  const double tau = std::exp(top.x);
  GammaMode mode = gamma_mode(table, prior, q_ridged, tau, warm, cfg);
  total_inner += mode.iterations;

  Eigen::MatrixXd neg_hess = tau * q_ridged;
  for (int i = 0; i < d; ++i)
    neg_hess(i, i) += table.exposure[i] * std::exp(-mode.gamma[i]);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_hess);
  Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(d, d));

  LaplaceResult out;
  out.grid = std::move(grid);
  out.grid.log_ne = mode.gamma;
  out.gamma = mode.gamma;
  out.gamma_sd.resize(d);
  for (int i = 0; i < d; ++i) out.gamma_sd[i] = std::sqrt(std::max(cov(i, i), 0.0));
  out.tau = tau;
  out.iterations =
      static_cast<int>(std::min<long>(total_inner, std::numeric_limits<int>::max()));
  out.grad_norm = mode.grad_norm;
  out.objective = top.fx;
  out.converged = true;
  return out;
}

}  // namespace

TrajectorySummary LaplaceResult::summary() const {
  TrajectorySummary s;
  s.grid_points = grid.points;
  const int d = static_cast<int>(gamma.size());
  s.median.resize(d);
  s.lower.resize(d);
  s.upper.resize(d);
  for (int i = 0; i < d; ++i) {
    s.median[i] = std::exp(gamma[i]);
    s.lower[i] = std::exp(gamma[i] - 1.96 * gamma_sd[i]);
    s.upper[i] = std::exp(gamma[i] + 1.96 * gamma_sd[i]);
  }
  return s;
}

LaplaceResult laplace_fit(const CoalescentData& data, const LambdaMeasure& measure,
                          const FitConfig& cfg) {
  cfg.validate();
  SkyGrid grid = build_grid(data, cfg.grid_points);
  ExposureTable table = build_exposure(data, grid, measure);
  GmrfPrior prior(grid.n_cells(), grid.spacing(), cfg.tau_shape, cfg.tau_rate, cfg.ridge);
  return laplace_impl(table, prior, grid, grid.log_ne, 0.0, cfg);
}

// ---------------------------------------------------------------------------
// Gridded conditional for the Beta-family parameter

AlphaConditional::AlphaConditional(const ExposureTable& table, int n_intervals, double width)
    : width_(width) {
  if (n_intervals < 1 || !(width > 0.0) || n_intervals * width > 2.0 + 1e-12)
    throw InputError("alpha grid must tile (0, 2]");
  if (table.event_cell.empty()) throw InputError("no coalescent events in exposure table");

  event_cells_ = table.event_cell;

  std::map<int, std::map<int, double>> by_count;  // lineages -> cell -> duration
  for (const auto& s : table.spans) by_count[s.lineages][s.cell] += s.duration;
  std::vector<int> counts;
  counts.reserve(by_count.size());
  for (const auto& [b, cells] : by_count) {
    counts.push_back(b);
    durations_.emplace_back(cells.begin(), cells.end());
  }

  const int b_max = std::max(table.max_lineages, 2);
  total_rate_.resize(n_intervals, static_cast<int>(counts.size()));
  event_const_.resize(n_intervals);
  for (int m = 0; m < n_intervals; ++m) {
    RateTable rates(measure_for_alpha(midpoint(m)), b_max);
    for (std::size_t j = 0; j < counts.size(); ++j)
      total_rate_(m, j) = std::exp(rates.total_log_rate(counts[j]));
    double s = 0.0;
    for (std::size_t k = 0; k < table.event_cell.size(); ++k)
      s += table.event_log_choose[k] +
           rates.log_rate(table.event_lineages[k], table.event_block[k]);
    event_const_[m] = s;
  }
}

std::vector<double> AlphaConditional::log_weights(const Eigen::VectorXd& gamma) const {
  Eigen::VectorXd w(total_rate_.cols());
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    double s = 0.0;
    for (const auto& [cell, dur] : durations_[j]) s += dur * std::exp(-gamma[cell]);
    w[j] = s;
  }
  double gamma_events = 0.0;
  for (int cell : event_cells_) gamma_events += gamma[cell];
  Eigen::VectorXd lam_w = total_rate_ * w;
  std::vector<double> out(event_const_.size());
  for (std::size_t m = 0; m < out.size(); ++m)
    out[m] = event_const_[m] - gamma_events - lam_w[m];
  return out;
}

std::vector<double> AlphaConditional::probabilities(const Eigen::VectorXd& gamma) const {
  std::vector<double> p = log_weights(gamma);
  double hi = -kInf;
  for (double v : p) hi = std::max(hi, v);
  if (!std::isfinite(hi)) throw NumericalError("alpha conditional has no finite weight");
  double total = 0.0;
  for (double& v : p) total += (v = std::exp(v - hi));
  for (double& v : p) v /= total;
  return p;
}

double AlphaConditional::sample_from(const std::vector<double>& probs, Rng& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  std::size_t pick = probs.size() - 1;
  double acc = 0.0;
  for (std::size_t m = 0; m < probs.size(); ++m) {
    acc += probs[m];
    if (u <= acc) {
      pick = m;
      break;
    }
  }
  // uniform inside the chosen interval (width*pick, width*(pick+1)]
  return width_ * (pick + 1.0 - unif(rng));
}

double AlphaConditional::sample(const Eigen::VectorXd& gamma, Rng& rng) const {
  return sample_from(probabilities(gamma), rng);
}

// ---------------------------------------------------------------------------
// HMC

namespace {

struct TrajectoryOutcome {
  Eigen::VectorXd gamma;
  double delta_h;
};

// One Hamiltonian trajectory; exact harmonic flow for the prior modes when
// split = true, plain leapfrog otherwise. mass_floor, when given, is a
// per-eigenmode floor (likelihood-curvature estimate) replacing the scalar
// mass in the split metric.
TrajectoryOutcome run_trajectory(const ExposureTable* table, const GmrfPrior& prior,
                                 const Eigen::VectorXd& gamma0, double tau, double eps,
                                 int steps, double mass, bool split, Rng& rng,
                                 const Eigen::VectorXd* mass_floor = nullptr) {
  const int d = prior.dim();
  std::normal_distribution<double> normal(0.0, std::sqrt(mass));
  auto u_like = [&](const Eigen::VectorXd& g) {
    return table != nullptr ? -log_likelihood(*table, g) : 0.0;
  };
  auto grad_like = [&](const Eigen::VectorXd& g) -> Eigen::VectorXd {
    if (table == nullptr) return Eigen::VectorXd::Zero(d);
    return grad_log_likelihood(*table, g);
  };

  TrajectoryOutcome out;
  if (split) {
    const Eigen::MatrixXd& v = prior.eigenvectors();
    const Eigen::VectorXd& lam = prior.eigenvalues();
    Eigen::VectorXd q = v.transpose() * gamma0;

    // Per-mode mass m_i = floor_i + tau*lam_i: the prior part keeps every
    // rotation angle below eps no matter how stiff the smoothing gets, and
    // the floor (likelihood curvature when provided, else the scalar mass)
    // bounds the kick amplitude where the data are informative. Both may
    // depend on tau and alpha but not on the gamma being updated, so the
    // kernel stays exactly reversible.
    Eigen::VectorXd mvec(d);
    for (int i = 0; i < d; ++i)
      mvec[i] = (mass_floor ? (*mass_floor)[i] : mass) + tau * lam[i];
    Eigen::VectorXd rho(d);
    for (int i = 0; i < d; ++i) rho[i] = normal(rng) * std::sqrt(mvec[i] / mass);

    auto prior_energy = [&](const Eigen::VectorXd& qq) {
      return 0.5 * tau * (lam.array() * qq.array().square()).sum();
    };
    auto kinetic = [&](const Eigen::VectorXd& pp) {
      return 0.5 * (pp.array().square() / mvec.array()).sum();
    };
    const double h0 = u_like(gamma0) + prior_energy(q) + kinetic(rho);

    auto rotate = [&](Eigen::VectorXd& qq, Eigen::VectorXd& pp) {
      for (int i = 0; i < d; ++i) {
        if (lam[i] == 0.0) {
          qq[i] += eps * pp[i] / mvec[i];
        } else {
          double omega = std::sqrt(tau * lam[i] / mvec[i]);
          double c = std::cos(omega * eps), s = std::sin(omega * eps);
          double qn = qq[i] * c + pp[i] * s / (mvec[i] * omega);
          pp[i] = -qq[i] * mvec[i] * omega * s + pp[i] * c;
          qq[i] = qn;
        }
      }
    };

    Eigen::VectorXd gamma = gamma0;
    rho += (0.5 * eps) * (v.transpose() * grad_like(gamma));
    for (int l = 0; l < steps; ++l) {
      rotate(q, rho);
      gamma = v * q;
      double scale = (l + 1 == steps) ? 0.5 * eps : eps;
      rho += scale * (v.transpose() * grad_like(gamma));
    }
    const double h1 = u_like(gamma) + prior_energy(q) + kinetic(rho);
    out.gamma = std::move(gamma);
    out.delta_h = h1 - h0;
    return out;
  }

  Eigen::VectorXd gamma = gamma0;
  Eigen::VectorXd p(d);
  for (int i = 0; i < d; ++i) p[i] = normal(rng);
  auto potential = [&](const Eigen::VectorXd& g) {
    return u_like(g) + 0.5 * tau * prior.quad_form(g);
  };
  auto force = [&](const Eigen::VectorXd& g) -> Eigen::VectorXd {
    return grad_like(g) - tau * prior.apply_precision(g);
  };
  const double h0 = potential(gamma) + p.squaredNorm() / (2.0 * mass);
  p += (0.5 * eps) * force(gamma);
  for (int l = 0; l < steps; ++l) {
    gamma += (eps / mass) * p;
    double scale = (l + 1 == steps) ? 0.5 * eps : eps;
    p += scale * force(gamma);
  }
  const double h1 = potential(gamma) + p.squaredNorm() / (2.0 * mass);
  out.gamma = std::move(gamma);
  out.delta_h = h1 - h0;
  return out;
}

struct HmcStep {
  Eigen::VectorXd gamma;
  double accept_prob;
  bool accepted;
};

HmcStep hmc_step(const ExposureTable* table, const GmrfPrior& prior, const Eigen::VectorXd& gamma,
                 double tau, double eps, int steps, double mass, bool split, Rng& rng,
                 const Eigen::VectorXd* mass_floor = nullptr) {
  TrajectoryOutcome traj =
      run_trajectory(table, prior, gamma, tau, eps, steps, mass, split, rng, mass_floor);
  HmcStep out;
  double a = std::isfinite(traj.delta_h) ? std::min(1.0, std::exp(-traj.delta_h)) : 0.0;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  out.accepted = unif(rng) < a;
  out.accept_prob = a;
  out.gamma = out.accepted ? std::move(traj.gamma) : gamma;
  return out;
}

struct DualAveraging {
  double mu, h_bar = 0.0, log_eps_bar;
  double target, gamma = 0.05, t0 = 10.0, kappa = 0.75;
  long m = 0;

  DualAveraging(double eps0, double target_accept)
      : mu(std::log(10.0 * eps0)), log_eps_bar(std::log(eps0)), target(target_accept) {}

  double update(double accept_prob) {
    ++m;
    h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (target - accept_prob) / (m + t0);
    double log_eps = mu - std::sqrt(static_cast<double>(m)) / gamma * h_bar;
    log_eps = std::clamp(log_eps, std::log(1e-7), std::log(1e3));
    double eta = std::pow(static_cast<double>(m), -kappa);
    log_eps_bar = eta * log_eps + (1.0 - eta) * log_eps_bar;
    return std::exp(log_eps);
  }
  double frozen() const { return std::exp(std::clamp(log_eps_bar, std::log(1e-7), std::log(1e3))); }
};

}  // namespace

double hmc_energy_error(const ExposureTable& table, const GmrfPrior& prior,
                        const Eigen::VectorXd& gamma, double tau, double eps, int steps,
                        bool split, std::uint64_t seed) {
  Rng rng(seed);
  TrajectoryOutcome traj =
      run_trajectory(&table, prior, gamma, tau, eps, steps, 1.0, split, rng);
  return std::abs(traj.delta_h);
}

double effective_sample_size(const std::vector<double>& draws) {
  const std::size_t n = draws.size();
  if (n < 8) return static_cast<double>(n);
  double mean = 0.0;
  for (double x : draws) mean += x;
  mean /= n;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (draws[i] - mean) * (draws[i + lag] - mean);
    return s / n;
  };
  const double c0 = autocov(0);
  // variance at rounding scale means a constant chain, not a sticky one
  if (c0 <= 1e-24 * (1.0 + mean * mean)) return static_cast<double>(n);
  const std::size_t max_lag = std::min<std::size_t>(n - 2, 1000);
  double sum_pairs = 0.0;
  double prev = kInf;
  for (std::size_t m = 0;; ++m) {
    std::size_t t1 = 2 * m, t2 = 2 * m + 1;
    if (t2 > max_lag) break;
    double g = (autocov(t1) + autocov(t2)) / c0;
    if (g <= 0.0) break;
    g = std::min(g, prev);
    prev = g;
    sum_pairs += g;
  }
  double iact = std::max(1.0, 2.0 * sum_pairs - 1.0);
  return std::clamp(static_cast<double>(n) / iact, 1.0, static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Front-door fits

namespace {

bool near_boundary(double alpha, const FitConfig& cfg) {
  return alpha - cfg.alpha_lo < 5 * cfg.alpha_tol || cfg.alpha_hi - alpha < 5 * cfg.alpha_tol;
}

FitResult result_from_laplace(std::string method, double alpha, bool boundary,
                              const LaplaceResult& lap, double loglik) {
  FitResult r;
  r.method = std::move(method);
  r.alpha = alpha;
  r.alpha_median = alpha;
  r.alpha_at_boundary = boundary;
  r.tau = lap.tau;
  r.trajectory = lap.summary();
  r.log_likelihood_at_estimate = loglik;
  r.iterations_used = lap.iterations;
  r.converged = lap.converged;
  return r;
}

}  // namespace

FitResult fit_bs_mle(const CoalescentData& data, const FitConfig& cfg) {
  cfg.validate();
  bool boundary = false;
  double alpha = block_size_mle(data, cfg.alpha_lo, cfg.alpha_hi, cfg.alpha_tol, &boundary);
  LaplaceResult lap = laplace_fit(data, measure_for_alpha(alpha), cfg);
  ExposureTable table = build_exposure(data, lap.grid, measure_for_alpha(alpha));
  FitResult r = result_from_laplace("bs-mle", alpha, boundary, lap,
                                    log_likelihood(table, lap.gamma));
  return r;
}

FitResult hybrid_fit(const CoalescentData& data, const FitConfig& cfg) {
  cfg.validate();
  data.validate();
  bool boundary = false;
  double alpha = block_size_mle(data, cfg.alpha_lo, cfg.alpha_hi, cfg.alpha_tol, &boundary);

  SkyGrid grid = build_grid(data, cfg.grid_points);
  ExposureTable table = build_exposure(data, grid, measure_for_alpha(alpha));
  GmrfPrior prior(grid.n_cells(), grid.spacing(), cfg.tau_shape, cfg.tau_rate, cfg.ridge);
  const int b_max = std::max(table.max_lineages, 2);

  Eigen::VectorXd gamma = grid.log_ne;
  double theta = 0.0;
  std::vector<double> trace{alpha};
  double best_loglik = -kInf, best_alpha = alpha;
  bool converged = false;
  int outer = 0;

  for (; outer < cfg.hybrid_max_iter; ) {
    ++outer;
    table.rebuild_rates(RateTable(measure_for_alpha(alpha), b_max));
    LaplaceResult lap = laplace_impl(table, prior, grid, gamma, theta, cfg);
    gamma = lap.gamma;
    theta = std::log(lap.tau);

    auto f = [&](double a) {
      table.rebuild_rates(RateTable(measure_for_alpha(a), b_max));
      return log_likelihood(table, gamma);
    };
    GoldenResult step = golden_max(f, cfg.alpha_lo, cfg.alpha_hi, cfg.alpha_tol);
    trace.push_back(step.x);
    if (step.fx > best_loglik) {
      best_loglik = step.fx;
      best_alpha = step.x;
    }
    double delta = std::abs(step.x - alpha);
    alpha = step.x;
    if (delta < cfg.hybrid_tol) {
      converged = true;
      break;
    }
  }
  if (!converged) alpha = best_alpha;  // oscillation: keep the best-likelihood iterate

  table.rebuild_rates(RateTable(measure_for_alpha(alpha), b_max));
  LaplaceResult lap = laplace_impl(table, prior, grid, gamma, theta, cfg);
  FitResult r = result_from_laplace("hybrid", alpha, near_boundary(alpha, cfg), lap,
                                    log_likelihood(table, lap.gamma));
  r.iterations_used = outer;
  r.converged = converged;
  r.alpha_trace = std::move(trace);
  return r;
}

FitResult mcmc_fit(const CoalescentData& data, const FitConfig& cfg) {
  cfg.validate();
  data.validate();
  Rng rng(cfg.seed);

  SkyGrid grid = build_grid(data, cfg.grid_points);
  GmrfPrior prior(grid.n_cells(), grid.spacing(), cfg.tau_shape, cfg.tau_rate, cfg.ridge);
  const int d = grid.n_cells();
  const bool sample_measure = !cfg.fixed_alpha.has_value();
  const double alpha_span = cfg.alpha_intervals * cfg.alpha_width;

  double alpha;
  if (!sample_measure) {
    alpha = *cfg.fixed_alpha;
  } else if (cfg.likelihood_enabled) {
    alpha = block_size_mle(data, cfg.alpha_lo, cfg.alpha_hi, 1e-4);
    alpha = std::clamp(alpha, 0.5 * cfg.alpha_width, alpha_span - 0.5 * cfg.alpha_width);
  } else {
    alpha = 1.0;
  }

  ExposureTable table = build_exposure(data, grid, measure_for_alpha(alpha));
  const int b_max = std::max(table.max_lineages, 2);
  const ExposureTable* like_table = cfg.likelihood_enabled ? &table : nullptr;

  std::optional<AlphaConditional> cond;
  if (sample_measure && cfg.likelihood_enabled)
    cond.emplace(table, cfg.alpha_intervals, cfg.alpha_width);

  Eigen::VectorXd gamma = grid.log_ne;
  double tau = cfg.fixed_tau.value_or(1.0);

  const int burn = std::max(1, static_cast<int>(cfg.iterations * cfg.burn_frac));
  const int keep = cfg.iterations - burn;
  if (keep < 1) throw InputError("burn-in leaves no draws");

  const bool adapt = cfg.step_size == 0.0;
  double eps = adapt ? 0.1 : cfg.step_size;
  DualAveraging da(eps, cfg.target_accept);

  // Burn-in EMA of the likelihood curvature diag(E_d e^{-gamma_d}), rotated
  // into the prior eigenbasis and frozen alongside the step size. It sets the
  // per-mode mass floor: where the chain drifts into high-exposure territory
  // the likelihood sharpens far beyond the scalar mass, and a step size tuned
  // elsewhere would start rejecting everything. The envelope factor covers
  // the curvature's wobble over the conditional spread (about e^{2 sigma}
  // with sigma <= 1/sqrt(h) in likelihood-dominated cells, so the stiffness
  // ratio h e^{2/sqrt(h)} / (4h + 1) stays below one for every h); without it
  // the tuned step size sits at the stability edge and low-tau excursions
  // tip it over.
  const double kCurvEnvelope = 4.0;
  Eigen::VectorXd h_ema = Eigen::VectorXd::Zero(d);
  if (like_table != nullptr)
    for (int j = 0; j < d; ++j) h_ema[j] = table.exposure[j] * std::exp(-gamma[j]);
  const Eigen::MatrixXd vsq = prior.eigenvectors().array().square();
  Eigen::VectorXd mass_floor =
      (kCurvEnvelope * (vsq.transpose() * h_ema)).array() + cfg.mass;
  // Stability clamp state. Dual averaging targets mean acceptance, which the
  // easy large-tau states dominate; when the tau-Gibbs chain later dives down
  // the hierarchical funnel (small tau, wide rough gamma), the likelihood
  // curvature E_d e^{-gamma_d} overshoots anything burn-in saw, the tuned
  // step size sits past the kick-rotate-kick stability bound, and the chain
  // wedges. The tuned step is trusted only in the tau range late burn-in
  // actually certified; below it the step obeys the worst plausible
  // curvature: a dip of k nats below the cell MLE costs n_d (e^k - k - 1)
  // nats of likelihood whatever the prior does, so along any plausibly
  // visited state the cell curvature n_d e^k stays under ~4 n_d + P (and
  // under P itself where n_d = 0, the exposure term being its own penalty).
  const double kPenaltyBudget = 15.0;
  double tau_lo = kInf;
  Eigen::VectorXd hq_cap = Eigen::VectorXd::Zero(d);
  if (like_table != nullptr) {
    Eigen::VectorXd h_cap(d);
    for (int j = 0; j < d; ++j) h_cap[j] = 4.0 * table.event_count[j] + kPenaltyBudget;
    hq_cap = vsq.transpose() * h_cap;
  }

  Eigen::MatrixXd gamma_draws(keep, d);
  std::vector<double> alpha_draws, tau_draws;
  alpha_draws.reserve(keep);
  tau_draws.reserve(keep);
  std::vector<double> rb_alpha(cond ? cond->n_intervals() : 0, 0.0);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  long accepted_post = 0;
  int window_count = 0, window_accepts = 0;

  const bool trace = std::getenv("LAMBDAPOP_TRACE") != nullptr;
  double trace_acc = 0.0;
  int trace_n = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    // Every 8th step runs at eps/16: stable against any plausible curvature,
    // so a chain wedged where full-size trajectories all diverge escapes
    // within a few iterations, and the ladder steps alone keep a 500-window
    // above the collapse guard. The cycle is a fixed function of the
    // iteration index, never of the state, so the kernel stays valid.
    const bool ladder = it % 8 == 7;
    double eps_it = ladder ? eps / 16.0 : eps;
    // Below the certified tau range, additionally obey eps_safe(tau) =
    // 1.8 / sqrt(max_i hq_cap_i / m_i(tau)): worst plausible curvature
    // against the current metric. A pure function of tau and frozen
    // constants, so the post-burn-in kernel stays valid.
    if (it >= burn && like_table != nullptr && tau < tau_lo) {
      double worst = 0.0;
      for (int i = 0; i < d; ++i)
        worst = std::max(worst, hq_cap[i] / (mass_floor[i] + tau * prior.eigenvalues()[i]));
      if (worst > 0.0) eps_it = std::min(eps_it, 1.8 / std::sqrt(worst));
    }
    if (it >= burn / 2 && it < burn) tau_lo = std::min(tau_lo, tau);
    HmcStep step =
        hmc_step(like_table, prior, gamma, tau, eps_it, cfg.leapfrog_steps, cfg.mass,
                 cfg.split_hmc, rng, &mass_floor);
    gamma = std::move(step.gamma);

    if (trace) {
      trace_acc += step.accept_prob;
      ++trace_n;
      if (trace_n == 250) {
        std::fprintf(stderr,
                     "trace it=%d eps=%.4g tau=%.4g alpha=%.3f acc=%.3f gmin=%.2f gmax=%.2f\n",
                     it, eps, tau, alpha, trace_acc / trace_n, gamma.minCoeff(),
                     gamma.maxCoeff());
        trace_acc = 0.0;
        trace_n = 0;
      }
    }

    if (adapt) {
      if (it < burn) {
        // ladder steps would feed near-certain accepts into the average
        if (!ladder) eps = da.update(step.accept_prob);
      } else if (it == burn) {
        eps = da.frozen();
      }
    }

    if (!cfg.fixed_tau) tau = prior.sample_tau(gamma, rng);

    if (sample_measure) {
      if (cfg.likelihood_enabled) {
        std::vector<double> probs = cond->probabilities(gamma);
        alpha = cond->sample_from(probs, rng);
        table.rebuild_rates(RateTable(measure_for_alpha(alpha), b_max));
        // Rao-Blackwellized marginal: averaging the conditional interval
        // probabilities over the chain estimates the same posterior with far
        // less noise than the jittered draws themselves.
        if (it >= burn)
          for (std::size_t m = 0; m < probs.size(); ++m) rb_alpha[m] += probs[m];
      } else {
        alpha = alpha_span * (1.0 - unif(rng));  // flat conditional
      }
    }

    if (like_table != nullptr && it < burn) {
      for (int j = 0; j < d; ++j)
        h_ema[j] = 0.98 * h_ema[j] + 0.02 * table.exposure[j] * std::exp(-gamma[j]);
      mass_floor = (kCurvEnvelope * (vsq.transpose() * h_ema)).array() + cfg.mass;
    }

    if (it >= burn) {
      gamma_draws.row(it - burn) = gamma;
      alpha_draws.push_back(alpha);
      tau_draws.push_back(tau);
      accepted_post += step.accepted ? 1 : 0;
      ++window_count;
      window_accepts += step.accepted ? 1 : 0;
      if (window_count == 500) {
        if (window_accepts < 25) {
          std::ostringstream os;
          os << "sampler collapse: " << window_accepts << "/500 acceptances post burn-in"
             << " (step size " << eps << ", leapfrog " << cfg.leapfrog_steps
             << "); retune step size or disable the split integrator";
          throw NumericalError(os.str());
        }
        window_count = 0;
        window_accepts = 0;
      }
    }
  }

  FitResult r;
  r.method = "mcmc";
  r.step_size = eps;
  r.accept_rate = static_cast<double>(accepted_post) / keep;
  r.iterations_used = cfg.iterations;

  r.trajectory.grid_points = grid.points;
  r.trajectory.median.resize(d);
  r.trajectory.lower.resize(d);
  r.trajectory.upper.resize(d);
  std::vector<double> col(keep);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < keep; ++i) col[i] = gamma_draws(i, j);
    std::sort(col.begin(), col.end());
    r.trajectory.lower[j] = std::exp(quantile_sorted(col, 0.025));
    r.trajectory.median[j] = std::exp(quantile_sorted(col, 0.5));
    r.trajectory.upper[j] = std::exp(quantile_sorted(col, 0.975));
  }

  std::vector<double> probe(keep);
  for (int i = 0; i < keep; ++i) probe[i] = gamma_draws(i, d / 2);
  r.ess_gamma_probe = effective_sample_size(probe);

  if (sample_measure) {
    if (cond) {
      double total = 0.0;
      for (double w : rb_alpha) total += w;
      double mean = 0.0, cum = 0.0, median = cond->width() * cond->n_intervals();
      for (int m = 0; m < cond->n_intervals(); ++m) {
        double w = rb_alpha[m] / total;
        mean += w * cond->midpoint(m);
        if (cum + w >= 0.5 && cum < 0.5) {
          // linear within the interval: the draw is uniform inside it
          median = cond->width() * (m + (0.5 - cum) / w);
        }
        cum += w;
      }
      r.alpha = mean;
      r.alpha_median = median;
    } else {
      double mean = 0.0;
      for (double a : alpha_draws) mean += a;
      mean /= alpha_draws.size();
      std::vector<double> sorted_alpha = alpha_draws;
      std::sort(sorted_alpha.begin(), sorted_alpha.end());
      r.alpha = mean;
      r.alpha_median = quantile_sorted(sorted_alpha, 0.5);
    }
    r.ess_alpha = effective_sample_size(alpha_draws);
    r.alpha_at_boundary = false;
  } else {
    r.alpha = *cfg.fixed_alpha;
    r.alpha_median = r.alpha;
  }

  double tau_mean = 0.0;
  for (double t : tau_draws) tau_mean += t;
  r.tau = tau_draws.empty() ? tau : tau_mean / tau_draws.size();

  if (cfg.likelihood_enabled) {
    table.rebuild_rates(RateTable(measure_for_alpha(std::clamp(r.alpha, 1e-6, 2.0)), b_max));
    Eigen::VectorXd gamma_med(d);
    for (int j = 0; j < d; ++j) gamma_med[j] = std::log(r.trajectory.median[j]);
    r.log_likelihood_at_estimate = log_likelihood(table, gamma_med);
  }

  r.alpha_draws = std::move(alpha_draws);
  r.tau_draws = std::move(tau_draws);
  if (cfg.store_gamma_draws) r.gamma_draws = std::move(gamma_draws);
  return r;
}

}  // namespace lambdapop
