#pragma once

#include <stdexcept>
#include <string>

namespace lambdapop {

// Invalid input: malformed trees, bad flags, inconsistent data. CLI exit code 2.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: nonconvergent quadrature or optimization, sampler collapse.
// CLI exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lambdapop
