#pragma once

#include <functional>

namespace lambdapop {

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // estimated absolute error
  int evaluations = 0;
  bool converged = false;
};

// Adaptive Gauss-Kronrod (G7,K15) on [a, b]. Worst intervals are bisected
// until sum(|err|) <= max(abs_tol, rel_tol * |integral|) or the interval
// budget runs out (converged = false).
QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double rel_tol = 1e-10, double abs_tol = 0.0,
                           int max_intervals = 2000);

// Same, on [0, 1] with a geometric pre-split toward both endpoints so
// integrable endpoint singularities (x^p or (1-x)^p, p > -1) resolve without
// deep bisection cascades.
QuadratureResult integrate_unit(const std::function<double(double)>& f, double rel_tol = 1e-10,
                                double abs_tol = 0.0, int max_intervals = 4000);

}  // namespace lambdapop
