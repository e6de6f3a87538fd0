#include "lambdapop/lambda_rates.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lambdapop/errors.hpp"
#include "lambdapop/quadrature.hpp"

namespace lambdapop {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& v) {
  double hi = kNegInf;
  for (double x : v) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

double lbeta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

void check_bk(int b, int k) {
  if (b < 2 || k < 2 || k > b) {
    std::ostringstream os;
    os << "merger rate needs 2 <= k <= b, got b=" << b << " k=" << k;
    throw InputError(os.str());
  }
}

// log of x^(k-2) (1-x)^(b-k) with 0^0 = 1 at the endpoints
double log_kernel(double x, int b, int k) {
  double out = 0.0;
  if (k > 2) out += (x == 0.0) ? kNegInf : (k - 2) * std::log(x);
  if (k < b) out += (x == 1.0) ? kNegInf : (b - k) * std::log1p(-x);
  return out;
}

struct RateVisitor {
  int b, k;

  double operator()(const LambdaMeasure::PointMass& p) const { return log_kernel(p.x, b, k); }

  double operator()(const LambdaMeasure::Beta& m) const {
    const double a = m.alpha;
    return lbeta(k - a, a + b - k) - lbeta(2.0 - a, a);
  }

  double operator()(const LambdaMeasure::Discrete& m) const {
    std::vector<double> terms(m.atoms.size());
    for (std::size_t i = 0; i < m.atoms.size(); ++i)
      terms[i] = std::log(m.weights[i]) + log_kernel(m.atoms[i], b, k);
    return log_sum_exp(terms);
  }

  double operator()(const LambdaMeasure::Density& m) const {
    auto integrand = [&](double x) {
      return std::pow(x, k - 2) * std::pow(1.0 - x, b - k) * m.pdf(x);
    };
    QuadratureResult r = integrate_unit(integrand);
    if (!r.converged) {
      std::ostringstream os;
      os << "rate quadrature did not converge for b=" << b << " k=" << k
         << " (error estimate " << r.error << ")";
      throw NumericalError(os.str());
    }
    return r.value <= 0.0 ? kNegInf : std::log(r.value);
  }
};

}  // namespace

LambdaMeasure LambdaMeasure::point_mass(double x) {
  if (!(x >= 0.0 && x <= 1.0)) throw InputError("point mass must lie in [0,1]");
  return LambdaMeasure(PointMass{x});
}

LambdaMeasure LambdaMeasure::beta(double alpha) {
  if (alpha == 2.0) return kingman();
  if (!(alpha > 0.0 && alpha < 2.0))
    throw InputError("beta measure needs alpha in (0, 2], got " + std::to_string(alpha));
  return LambdaMeasure(Beta{alpha});
}

LambdaMeasure LambdaMeasure::discrete(std::vector<double> atoms, std::vector<double> weights) {
  if (atoms.empty() || atoms.size() != weights.size())
    throw InputError("discrete measure needs matching, nonempty atom and weight lists");
  double total = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (!(atoms[i] >= 0.0 && atoms[i] <= 1.0)) throw InputError("discrete atom outside [0,1]");
    if (!(weights[i] > 0.0)) throw InputError("discrete weights must be positive");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("discrete weights must sum to 1");
  for (auto& w : weights) w /= total;
  return LambdaMeasure(Discrete{std::move(atoms), std::move(weights)});
}

LambdaMeasure LambdaMeasure::discrete_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open measure file: " + path);
  std::vector<double> atoms, weights;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double x, w;
    if (!(row >> x >> w)) {
      if (lineno == 1) continue;  // header row
      throw InputError("measure file line " + std::to_string(lineno) + ": expected 'atom,weight'");
    }
    atoms.push_back(x);
    weights.push_back(w);
  }
  return discrete(std::move(atoms), std::move(weights));
}

LambdaMeasure LambdaMeasure::density(std::function<double(double)> pdf) {
  if (!pdf) throw InputError("density measure needs a callable pdf");
  return LambdaMeasure(Density{std::move(pdf)});
}

LambdaMeasure LambdaMeasure::parse(const std::string& text) {
  auto colon = text.find(':');
  std::string head = text.substr(0, colon);
  std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto numeric_arg = [&]() {
    char* end = nullptr;
    double v = std::strtod(arg.c_str(), &end);
    if (end == arg.c_str() || *end != '\0')
      throw InputError("bad numeric argument in measure '" + text + "'");
    return v;
  };
  if (head == "kingman" && arg.empty()) return kingman();
  if (head == "bs" && arg.empty()) return bolthausen_sznitman();
  if (head == "beta") return beta(numeric_arg());
  if (head == "pointmass") return point_mass(numeric_arg());
  if (head == "discrete" && !arg.empty()) return discrete_from_csv(arg);
  throw InputError("unknown measure '" + text +
                   "' (expected kingman, bs, beta:<alpha>, pointmass:<x>, discrete:<csv>)");
}

bool LambdaMeasure::is_kingman() const {
  const auto* p = std::get_if<PointMass>(&v_);
  return p != nullptr && p->x == 0.0;
}

std::string LambdaMeasure::describe() const {
  std::ostringstream os;
  if (is_kingman()) return "kingman";
  if (const auto* p = std::get_if<PointMass>(&v_)) {
    os << "pointmass:" << p->x;
  } else if (const auto* m = std::get_if<Beta>(&v_)) {
    os << "beta:" << m->alpha;
  } else if (const auto* d = std::get_if<Discrete>(&v_)) {
    os << "discrete(" << d->atoms.size() << " atoms)";
  } else {
    os << "density";
  }
  return os.str();
}

double log_choose(int n, int k) {
  if (n < 0 || k < 0 || k > n) throw InputError("log_choose needs 0 <= k <= n");
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double log_rate(int b, int k, const LambdaMeasure& m) {
  check_bk(b, k);
  return std::visit(RateVisitor{b, k}, m.value());
}

double total_log_rate(int b, const LambdaMeasure& m) {
  if (b < 2) throw InputError("total merger rate needs b >= 2");
  std::vector<double> terms(b - 1);
  for (int k = 2; k <= b; ++k) terms[k - 2] = log_choose(b, k) + log_rate(b, k, m);
  return log_sum_exp(terms);
}

double bound_log_rate(int b, double alpha) {
  if (b < 2) throw InputError("rate bound needs b >= 2");
  if (!(alpha > 0.0 && alpha <= 2.0)) throw InputError("rate bound needs alpha in (0, 2]");
  return std::log(b - 1.0) + (alpha - 1.0) * std::log(0.5 * b);
}

std::vector<double> block_size_pmf(int b, const LambdaMeasure& m) {
  if (b < 2) throw InputError("block-size pmf needs b >= 2");
  std::vector<double> logw(b - 1);
  for (int k = 2; k <= b; ++k) logw[k - 2] = log_choose(b, k) + log_rate(b, k, m);
  double norm = log_sum_exp(logw);
  std::vector<double> pmf(b - 1);
  double total = 0.0;
  for (int i = 0; i < b - 1; ++i) {
    pmf[i] = std::exp(logw[i] - norm);
    total += pmf[i];
  }
  for (auto& p : pmf) p /= total;
  return pmf;
}

double mean_block_size(int b, const LambdaMeasure& m) {
  std::vector<double> pmf = block_size_pmf(b, m);
  double mean = 0.0;
  for (int k = 2; k <= b; ++k) mean += k * pmf[k - 2];
  return mean;
}

std::size_t RateTable::index(int b, int k) const {
  check_bk(b, k);
  if (b > b_max_) throw InputError("rate table built for b_max=" + std::to_string(b_max_));
  return static_cast<std::size_t>(b - 1) * (b - 2) / 2 + (k - 2);
}

RateTable::RateTable(const LambdaMeasure& m, int b_max) : measure_(m), b_max_(b_max) {
  if (b_max < 2) throw InputError("rate table needs b_max >= 2");
  log_rates_.resize(static_cast<std::size_t>(b_max) * (b_max - 1) / 2);
  log_totals_.assign(b_max + 1, kNegInf);

  // lgamma(i) for i = 1 .. b_max + 1, shared by rates and binomials
  std::vector<double> lgf(b_max + 2);
  for (int i = 1; i <= b_max + 1; ++i) lgf[i] = std::lgamma(static_cast<double>(i));

  std::size_t pos = 0;
  if (const auto* beta = std::get_if<LambdaMeasure::Beta>(&m.value())) {
    const double a = beta->alpha;
    std::vector<double> lga(b_max + 1), lgb(b_max - 1);
    for (int k = 2; k <= b_max; ++k) lga[k] = std::lgamma(k - a);
    for (int j = 0; j <= b_max - 2; ++j) lgb[j] = std::lgamma(a + j);
    const double lbeta0 = std::lgamma(2.0 - a) + std::lgamma(a);
    for (int b = 2; b <= b_max; ++b)
      for (int k = 2; k <= b; ++k) log_rates_[pos++] = lga[k] + lgb[b - k] - lgf[b] - lbeta0;
  } else {
    for (int b = 2; b <= b_max; ++b)
      for (int k = 2; k <= b; ++k) log_rates_[pos++] = std::visit(RateVisitor{b, k}, m.value());
  }

  std::vector<double> terms;
  for (int b = 2; b <= b_max; ++b) {
    terms.resize(b - 1);
    std::size_t row = static_cast<std::size_t>(b - 1) * (b - 2) / 2;
    for (int k = 2; k <= b; ++k)
      terms[k - 2] = lgf[b + 1] - lgf[k + 1] - lgf[b - k + 1] + log_rates_[row + (k - 2)];
    log_totals_[b] = log_sum_exp(terms);
  }
}

std::vector<double> RateTable::block_size_pmf(int b) const {
  std::size_t row = index(b, 2);
  std::vector<double> pmf(b - 1);
  double lchoose_b = std::lgamma(b + 1.0);
  double total = 0.0;
  for (int k = 2; k <= b; ++k) {
    double logw = lchoose_b - std::lgamma(k + 1.0) - std::lgamma(b - k + 1.0) +
                  log_rates_[row + (k - 2)] - log_totals_[b];
    pmf[k - 2] = std::exp(logw);
    total += pmf[k - 2];
  }
  for (auto& p : pmf) p /= total;
  return pmf;
}

}  // namespace lambdapop
