#include <cmath>

#include "doctest.h"
#include "lambdapop/quadrature.hpp"
#include "test_util.hpp"

using namespace lambdapop;

TEST_CASE("polynomials are exact") {
  auto r = integrate([](double x) { return 3.0 * x * x; }, 0.0, 1.0);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.evaluations >= 15);
}

TEST_CASE("gaussian against erf") {
  auto r = integrate([](double x) { return std::exp(-x * x); }, -1.0, 1.0);
  CHECK(r.converged);
  CHECK(r.value == doctest::Approx(std::sqrt(M_PI) * std::erf(1.0)).epsilon(1e-11));
}

TEST_CASE("zero integral needs the absolute tolerance") {
  auto r = integrate([](double x) { return std::sin(x); }, 0.0, 2.0 * M_PI, 1e-10, 1e-12);
  CHECK(r.converged);
  CHECK(std::abs(r.value) < 1e-10);
}

TEST_CASE("integrable endpoint singularity on the unit interval") {
  auto r = integrate_unit([](double x) { return 1.0 / std::sqrt(x); }, 1e-10);
  CHECK(r.converged);
  CHECK(testutil::rel_err(r.value, 2.0) < 1e-9);
}

TEST_CASE("two-sided beta singularity matches the beta function") {
  // x^(-0.7) (1-x)^(-0.3) integrates to B(0.3, 0.7) = pi / sin(0.3 pi)
  auto r = integrate_unit(
      [](double x) { return std::pow(x, -0.7) * std::pow(1.0 - x, -0.3); }, 1e-9);
  CHECK(r.converged);
  CHECK(testutil::rel_err(r.value, M_PI / std::sin(0.3 * M_PI)) < 1e-8);
}

TEST_CASE("error estimate brackets the truth") {
  auto r = integrate([](double x) { return std::cos(17.0 * x); }, 0.0, 1.0);
  double truth = std::sin(17.0) / 17.0;
  CHECK(r.converged);
  CHECK(std::abs(r.value - truth) <= std::max(r.error, 1e-13));
}
