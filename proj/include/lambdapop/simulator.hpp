#pragma once

#include <string>
#include <variant>
#include <vector>

#include "lambdapop/genealogy.hpp"
#include "lambdapop/lambda_rates.hpp"
#include "lambdapop/rng.hpp"

namespace lambdapop {

// Deterministic effective population size over backward time t >= 0.
class Trajectory {
 public:
  struct Uniform {
    double level;
  };
  struct Exponential {
    double scale, rate;  // scale * exp(-rate * t)
  };
  struct BoomBust {
    double scale, center;  // scale * exp(-|t - center|)
  };
  struct Piecewise {
    std::vector<double> knots;   // knots[0] == 0; last value extends to infinity
    std::vector<double> values;  // values.size() == knots.size()
  };

  static Trajectory uniform(double level);
  static Trajectory exponential(double scale, double rate);
  static Trajectory boom_bust(double scale, double center);
  static Trajectory piecewise(std::vector<double> knots, std::vector<double> values);
  static Trajectory piecewise_from_csv(const std::string& path);

  // "uniform:<level>", "exp:<scale>,<rate>", "boombust:<scale>,<center>",
  // "piecewise:<csv path>"
  static Trajectory parse(const std::string& text);

  double value(double t) const;

  // integral of 1 / Ne over [t0, t1]
  double inverse_integral(double t0, double t1) const;

  // Smallest w >= 0 with integral_{t0}^{t0+w} dv/Ne(v) = target (closed form
  // per family; walks cells for piecewise). +inf when the hazard never
  // accumulates to target.
  double invert_hazard(double t0, double target) const;

  std::string describe() const;

 private:
  using Value = std::variant<Uniform, Exponential, BoomBust, Piecewise>;
  explicit Trajectory(Value v) : v_(std::move(v)) {}
  Value v_;
};

// Heterochronous sampling design: counts[j] tips enter at times[j].
struct SamplingSchedule {
  std::vector<double> times;  // strictly increasing, times[0] == 0
  std::vector<int> counts;    // each >= 1, total >= 2

  int total() const;
  void validate() const;

  // "0:30,1.5:20" (time:count pairs) or "iso:<n>"
  static SamplingSchedule parse(const std::string& text);
  std::string describe() const;
};

// Draws a genealogy for the schedule's tips. While A lineages are extant the
// next merger fires at rate lambda_A / Ne(t); its size follows the block-size
// pmf at A. Tips are labeled t1, t2, ... in batch order.
Genealogy simulate(const SamplingSchedule& schedule, const Trajectory& traj,
                   const RateTable& rates, Rng& rng);
Genealogy simulate(const SamplingSchedule& schedule, const Trajectory& traj,
                   const LambdaMeasure& measure, Rng& rng);

}  // namespace lambdapop
