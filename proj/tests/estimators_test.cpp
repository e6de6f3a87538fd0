#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "lambdapop/errors.hpp"
#include "lambdapop/estimators.hpp"
#include "lambdapop/genealogy.hpp"
#include "lambdapop/gmrf.hpp"
#include "lambdapop/likelihood.hpp"
#include "lambdapop/simulator.hpp"
#include "test_util.hpp"

using namespace lambdapop;

namespace {

CoalescentData simulated_data(const char* schedule, double level, const LambdaMeasure& m,
                              std::uint64_t seed) {
  Rng rng(seed);
  return extract_stats(
      simulate(SamplingSchedule::parse(schedule), Trajectory::uniform(level), m, rng));
}

}  // namespace

TEST_CASE("measure selection snaps to kingman near two") {
  CHECK(measure_for_alpha(2.0).is_kingman());
  CHECK(measure_for_alpha(1.99995).is_kingman());
  CHECK_FALSE(measure_for_alpha(1.99).is_kingman());
  CHECK_THROWS_AS(measure_for_alpha(0.0), InputError);
}

TEST_CASE("binary trees push the block-size mle to the kingman boundary") {
  CoalescentData d = simulated_data("iso:50", 1.0, LambdaMeasure::kingman(), 8);
  bool boundary = false;
  double alpha = block_size_mle(d, 0.005, 2.0, 1e-6, &boundary);
  CHECK(boundary);
  CHECK(alpha > 1.99);
}

TEST_CASE("block-size mle recovers a low alpha from a large tree") {
  CoalescentData d = simulated_data("iso:200", 1.0, LambdaMeasure::bolthausen_sznitman(), 17);
  bool boundary = false;
  double alpha = block_size_mle(d, 0.005, 2.0, 1e-6, &boundary);
  CHECK_FALSE(boundary);
  CHECK(std::abs(alpha - 1.0) < 0.2);
}

TEST_CASE("block-size mle agrees with a grid scan") {
  CoalescentData d = simulated_data("iso:80", 1.0, LambdaMeasure::beta(1.4), 23);
  double alpha = block_size_mle(d, 0.005, 2.0, 1e-6);
  int b_max = 2;
  for (int k = 0; k < d.n_events(); ++k)
    b_max = std::max(b_max, lineage_count(d, d.coal_times[k]));
  double best = -1e300, best_a = 0.0;
  for (double a = 0.01; a < 2.0; a += 0.01) {
    double f = block_size_log_pseudolik(d, RateTable(measure_for_alpha(a), b_max));
    if (f > best) {
      best = f;
      best_a = a;
    }
  }
  CHECK(std::abs(alpha - best_a) <= 0.011);
}

TEST_CASE("laplace mode beats a brute-force grid search") {
  CoalescentData d;
  d.sample_times = {0.0};
  d.sample_counts = {3};
  d.coal_times = {1.0, 2.0};
  d.block_sizes = {2, 2};

  FitConfig cfg;
  cfg.grid_points = 3;
  LaplaceResult lap = laplace_fit(d, LambdaMeasure::kingman(), cfg);
  CHECK(lap.converged);
  CHECK(lap.grad_norm <= 1e-6);

  SkyGrid grid = build_grid(d, 3);
  ExposureTable table = build_exposure(d, grid, LambdaMeasure::kingman());
  GmrfPrior prior(2, grid.spacing(), cfg.tau_shape, cfg.tau_rate, cfg.ridge);

  // brute-force counterpart: profile gamma on a dense grid at each tau, then
  // score tau by the same Laplace marginal (profile value + normalization -
  // half log det of the curvature at the profiled gamma)
  auto profile_at = [&](double th, double& g0_out, double& g1_out) {
    double lo0 = -4, hi0 = 4, lo1 = -4, hi1 = 4;
    double tau = std::exp(th);
    double best = -1e300, b0 = 0, b1 = 0;
    for (int zoom = 0; zoom < 5; ++zoom) {
      best = -1e300;
      const int n = 40;
      for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
          Eigen::VectorXd g(2);
          g << lo0 + (hi0 - lo0) * i / n, lo1 + (hi1 - lo1) * j / n;
          double f = log_likelihood(table, g) - 0.5 * tau * prior.quad_form(g);
          if (f > best) {
            best = f;
            b0 = g[0];
            b1 = g[1];
          }
        }
      double w0 = (hi0 - lo0) / n, w1 = (hi1 - lo1) / n;
      lo0 = b0 - w0; hi0 = b0 + w0;
      lo1 = b1 - w1; hi1 = b1 + w1;
    }
    g0_out = b0;
    g1_out = b1;
    Eigen::MatrixXd h = tau * prior.regularized_precision();
    h(0, 0) += table.exposure[0] * std::exp(-b0);
    h(1, 1) += table.exposure[1] * std::exp(-b1);
    double logdet = std::log(h(0, 0) * h(1, 1) - h(0, 1) * h(1, 0));
    return best + (0.5 * prior.rank() + cfg.tau_shape) * th - cfg.tau_rate * std::exp(th) -
           0.5 * logdet;
  };

  double g0, g1;
  double best_marg = -1e300, best_th = 0.0, bg0 = 0.0, bg1 = 0.0;
  for (double th = -8.0; th <= 8.0 + 1e-9; th += 0.02) {
    double m = profile_at(th, g0, g1);
    if (m > best_marg) {
      best_marg = m;
      best_th = th;
      bg0 = g0;
      bg1 = g1;
    }
  }

  // laplace must end at least as high as the best grid point, at the same mode
  double lap_marg = profile_at(std::log(lap.tau), g0, g1);
  CHECK(lap_marg >= best_marg - 1e-6);
  CHECK(std::abs(std::log(lap.tau) - best_th) < 0.05);
  CHECK(std::abs(lap.gamma[0] - bg0) < 0.02);
  CHECK(std::abs(lap.gamma[1] - bg1) < 0.02);

  auto s = lap.summary();
  for (int i = 0; i < 2; ++i) {
    CHECK(s.median[i] == doctest::Approx(std::exp(lap.gamma[i])));
    CHECK(s.lower[i] < s.median[i]);
    CHECK(s.median[i] < s.upper[i]);
  }
}

TEST_CASE("alpha conditional weights track the likelihood exactly") {
  CoalescentData d = simulated_data("iso:12", 3.0, LambdaMeasure::beta(1.3), 29);
  SkyGrid grid = build_grid(d, 9);
  ExposureTable table = build_exposure(d, grid, LambdaMeasure::beta(1.3));
  AlphaConditional cond(table, 40, 0.05);

  Eigen::VectorXd gamma(grid.n_cells());
  Rng rng(3);
  std::normal_distribution<double> normal(std::log(3.0), 0.4);
  for (int i = 0; i < gamma.size(); ++i) gamma[i] = normal(rng);

  std::vector<double> lw = cond.log_weights(gamma);
  REQUIRE(lw.size() == 40);
  std::vector<double> ll(40);
  for (int m : {0, 7, 19, 33}) {
    table.rebuild_rates(RateTable(measure_for_alpha(cond.midpoint(m)), table.max_lineages));
    ll[m] = log_likelihood(table, gamma);
  }
  for (int m : {7, 19, 33})
    CHECK(lw[m] - lw[0] == doctest::Approx(ll[m] - ll[0]).epsilon(1e-9));
}

TEST_CASE("alpha conditional sampling matches its own weights") {
  CoalescentData d = simulated_data("iso:10", 2.0, LambdaMeasure::beta(1.0), 41);
  SkyGrid grid = build_grid(d, 7);
  ExposureTable table = build_exposure(d, grid, LambdaMeasure::beta(1.0));
  AlphaConditional cond(table, 3, 0.6);  // three wide intervals tiling (0, 1.8]
  Eigen::VectorXd gamma = Eigen::VectorXd::Constant(grid.n_cells(), std::log(2.0));

  std::vector<double> lw = cond.log_weights(gamma);
  double hi = *std::max_element(lw.begin(), lw.end());
  std::vector<double> p(3);
  double z = 0.0;
  for (int m = 0; m < 3; ++m) z += (p[m] = std::exp(lw[m] - hi));
  for (auto& v : p) v /= z;

  Rng rng(97);
  std::vector<int> hits(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    double a = cond.sample(gamma, rng);
    REQUIRE(a > 0.0);
    REQUIRE(a <= 1.8);
    ++hits[std::min<int>(2, static_cast<int>(std::ceil(a / 0.6)) - 1)];
  }
  double tv = 0.0;
  for (int m = 0; m < 3; ++m) tv += std::abs(hits[m] / double(n) - p[m]);
  CHECK(tv / 2.0 < 0.02);
}

TEST_CASE("leapfrog energy error shrinks quadratically in the step size") {
  CoalescentData d = simulated_data("iso:15", 1.0, LambdaMeasure::kingman(), 53);
  SkyGrid grid = build_grid(d, 13);
  ExposureTable table = build_exposure(d, grid, LambdaMeasure::kingman());
  GmrfPrior prior(grid.n_cells(), grid.spacing());
  Eigen::VectorXd gamma = grid.log_ne;

  for (bool split : {false, true}) {
    double e1 = hmc_energy_error(table, prior, gamma, 2.0, 0.08, 25, split, 11);
    double e2 = hmc_energy_error(table, prior, gamma, 2.0, 0.04, 50, split, 11);
    REQUIRE(e1 > 0.0);
    double ratio = e1 / e2;
    CHECK(ratio > 2.0);
    CHECK(ratio < 8.0);
  }
}

TEST_CASE("effective sample size on known processes") {
  Rng rng(71);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> iid(5000);
  for (auto& x : iid) x = normal(rng);
  double e = effective_sample_size(iid);
  CHECK(e > 3000.0);
  CHECK(e <= 5000.0);

  // AR(1) with phi = 0.9 has ESS factor (1-phi)/(1+phi) ~ 1/19
  std::vector<double> ar(20000);
  double x = 0.0;
  for (auto& v : ar) v = x = 0.9 * x + normal(rng);
  double ear = effective_sample_size(ar);
  CHECK(ear > 400.0);
  CHECK(ear < 2500.0);

  std::vector<double> flat(100, 3.14);
  CHECK(effective_sample_size(flat) == doctest::Approx(100.0));
}

TEST_CASE("mcmc smoke run produces coherent output") {
  CoalescentData d = simulated_data("iso:20", 1.0, LambdaMeasure::beta(1.5), 67);
  FitConfig cfg;
  cfg.grid_points = 21;
  cfg.iterations = 3000;
  cfg.seed = 5;
  cfg.store_gamma_draws = true;
  FitResult r = mcmc_fit(d, cfg);

  CHECK(r.method == "mcmc");
  CHECK(r.accept_rate > 0.3);
  CHECK(r.accept_rate <= 1.0);
  CHECK(r.alpha > 0.0);
  CHECK(r.alpha <= 2.0);
  CHECK(r.ess_alpha > 1.0);
  REQUIRE(r.trajectory.median.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(r.trajectory.lower[i] <= r.trajectory.median[i]);
    CHECK(r.trajectory.median[i] <= r.trajectory.upper[i]);
    CHECK(std::isfinite(r.trajectory.median[i]));
  }
  CHECK(r.alpha_draws.size() == 2700);
  CHECK(r.tau_draws.size() == 2700);
  CHECK(r.gamma_draws.rows() == 2700);
  CHECK(std::isfinite(r.log_likelihood_at_estimate));
}

TEST_CASE("fixed alpha and tau are honored") {
  CoalescentData d = simulated_data("iso:15", 1.0, LambdaMeasure::beta(1.5), 81);
  FitConfig cfg;
  cfg.grid_points = 11;
  cfg.iterations = 500;
  cfg.fixed_alpha = 1.5;
  cfg.fixed_tau = 3.0;
  FitResult r = mcmc_fit(d, cfg);
  CHECK(r.alpha == doctest::Approx(1.5));
  CHECK(r.tau == doctest::Approx(3.0));
  for (double t : r.tau_draws) CHECK(t == doctest::Approx(3.0));
}

TEST_CASE("prior-only split dynamics accept every proposal") {
  CoalescentData d = simulated_data("iso:10", 1.0, LambdaMeasure::kingman(), 90);
  FitConfig cfg;
  cfg.grid_points = 13;
  cfg.iterations = 800;
  cfg.likelihood_enabled = false;
  cfg.fixed_tau = 2.0;
  cfg.step_size = 0.3;  // no adaptation: the flow is exact regardless
  FitResult r = mcmc_fit(d, cfg);
  CHECK(r.accept_rate == doctest::Approx(1.0));
}

TEST_CASE("mcmc and laplace agree on a kingman posterior") {
  CoalescentData d = simulated_data("iso:40", 2.0, LambdaMeasure::kingman(), 101);
  FitConfig cfg;
  cfg.grid_points = 16;
  cfg.iterations = 6000;
  cfg.fixed_alpha = 2.0;
  cfg.seed = 13;
  FitResult r = mcmc_fit(d, cfg);
  LaplaceResult lap = laplace_fit(d, LambdaMeasure::kingman(), cfg);
  double dsum = 0.0;
  for (int i = 0; i < 15; ++i)
    dsum += std::abs(std::log(r.trajectory.median[i]) - lap.gamma[i]);
  CHECK(dsum / 15.0 < 0.5);
}

TEST_CASE("hybrid fit runs and reports a trace") {
  CoalescentData d = simulated_data("iso:40", 1.0, LambdaMeasure::beta(1.2), 111);
  FitConfig cfg;
  cfg.grid_points = 16;
  FitResult r = hybrid_fit(d, cfg);
  CHECK(r.method == "hybrid");
  CHECK(r.alpha > 0.0);
  CHECK(r.alpha <= 2.0);
  CHECK(r.alpha_trace.size() >= 2);
  CHECK(r.trajectory.median.size() == 15);
  CHECK(std::isfinite(r.log_likelihood_at_estimate));
}

TEST_CASE("bs-mle front door returns a full result") {
  CoalescentData d = simulated_data("iso:30", 1.0, LambdaMeasure::kingman(), 121);
  FitConfig cfg;
  cfg.grid_points = 11;
  FitResult r = fit_bs_mle(d, cfg);
  CHECK(r.method == "bs-mle");
  CHECK(r.alpha_at_boundary);
  CHECK(r.alpha > 1.99);
  CHECK(r.trajectory.median.size() == 10);
}

TEST_CASE("config validation rejects nonsense") {
  FitConfig cfg;
  cfg.grid_points = 2;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = FitConfig{};
  cfg.burn_frac = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = FitConfig{};
  cfg.fixed_alpha = 2.5;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = FitConfig{};
  cfg.alpha_intervals = 500;
  cfg.alpha_width = 0.005;  // 2.5 > 2 breaks the tiling
  CHECK_THROWS_AS(cfg.validate(), InputError);
}
