#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace lambdapop {

// Finite measure on [0,1] controlling multiple-merger rates. While b lineages
// are extant, each set of k merges at rate
//   lambda_{b,k} = integral of x^(k-2) (1-x)^(b-k) over the measure.
class LambdaMeasure {
 public:
  struct PointMass {
    double x;  // 0 = Kingman, 1 = star-shaped
  };
  struct Beta {
    double alpha;  // Beta(2 - alpha, alpha) density, 0 < alpha < 2
  };
  struct Discrete {
    std::vector<double> atoms;
    std::vector<double> weights;  // positive, summing to 1
  };
  struct Density {
    std::function<double(double)> pdf;  // integrable on [0,1]
  };
  using Value = std::variant<PointMass, Beta, Discrete, Density>;

  static LambdaMeasure kingman() { return LambdaMeasure(PointMass{0.0}); }
  static LambdaMeasure point_mass(double x);
  static LambdaMeasure beta(double alpha);  // alpha == 2 degenerates to kingman()
  static LambdaMeasure bolthausen_sznitman() { return beta(1.0); }
  static LambdaMeasure discrete(std::vector<double> atoms, std::vector<double> weights);
  static LambdaMeasure discrete_from_csv(const std::string& path);
  static LambdaMeasure density(std::function<double(double)> pdf);

  // "kingman", "bs", "beta:<alpha>", "pointmass:<x>", "discrete:<csv path>"
  static LambdaMeasure parse(const std::string& text);

  const Value& value() const { return v_; }
  bool is_kingman() const;
  std::string describe() const;

 private:
  explicit LambdaMeasure(Value v) : v_(std::move(v)) {}
  Value v_;
};

double log_choose(int n, int k);

// log lambda_{b,k}, 2 <= k <= b. -inf is a valid result (structural zero).
double log_rate(int b, int k, const LambdaMeasure& m);

// log of the total merger rate lambda_b = sum_k C(b,k) lambda_{b,k}.
double total_log_rate(int b, const LambdaMeasure& m);

// log of the total-rate envelope (b-1) * (b/2)^(alpha-1) for Beta measures.
double bound_log_rate(int b, double alpha);

// Distribution of the next merger's block size given b lineages; index k-2.
std::vector<double> block_size_pmf(int b, const LambdaMeasure& m);

double mean_block_size(int b, const LambdaMeasure& m);

// Dense cache of log lambda_{b,k} and log lambda_b for all 2 <= k <= b <= b_max.
// Beta measures build from tabulated lgamma values, so construction is cheap
// enough to sit inside a sampler's inner loop.
class RateTable {
 public:
  RateTable(const LambdaMeasure& m, int b_max);

  int b_max() const { return b_max_; }
  double log_rate(int b, int k) const { return log_rates_[index(b, k)]; }
  double total_log_rate(int b) const { return log_totals_[b]; }
  std::vector<double> block_size_pmf(int b) const;
  const LambdaMeasure& measure() const { return measure_; }

 private:
  LambdaMeasure measure_;
  int b_max_;
  std::vector<double> log_rates_;
  std::vector<double> log_totals_;

  std::size_t index(int b, int k) const;
};

}  // namespace lambdapop
