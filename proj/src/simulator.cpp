#include "lambdapop/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lambdapop/errors.hpp"

namespace lambdapop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> split_numbers(const std::string& text, char sep) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    char* end = nullptr;
    double v = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0')
      throw InputError("bad number '" + item + "' in '" + text + "'");
    out.push_back(v);
  }
  return out;
}

}  // namespace

Trajectory Trajectory::uniform(double level) {
  if (!(level > 0.0)) throw InputError("uniform trajectory needs a positive level");
  return Trajectory(Uniform{level});
}

Trajectory Trajectory::exponential(double scale, double rate) {
  if (!(scale > 0.0)) throw InputError("exponential trajectory needs a positive scale");
  if (!std::isfinite(rate)) throw InputError("exponential trajectory needs a finite rate");
  return Trajectory(Exponential{scale, rate});
}

Trajectory Trajectory::boom_bust(double scale, double center) {
  if (!(scale > 0.0)) throw InputError("boom-bust trajectory needs a positive scale");
  if (!(center >= 0.0)) throw InputError("boom-bust center must be >= 0");
  return Trajectory(BoomBust{scale, center});
}

Trajectory Trajectory::piecewise(std::vector<double> knots, std::vector<double> values) {
  if (knots.empty() || knots.size() != values.size())
    throw InputError("piecewise trajectory needs matching, nonempty knots and values");
  if (knots[0] != 0.0) throw InputError("piecewise trajectory must start at t=0");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (i > 0 && knots[i] <= knots[i - 1])
      throw InputError("piecewise knots must increase strictly");
    if (!(values[i] > 0.0)) throw InputError("piecewise values must be positive");
  }
  return Trajectory(Piecewise{std::move(knots), std::move(values)});
}

Trajectory Trajectory::piecewise_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trajectory file: " + path);
  std::vector<double> knots, values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    double t, v;
    if (!(row >> t >> v)) {
      if (lineno == 1) continue;  // header row
      throw InputError("trajectory file line " + std::to_string(lineno) +
                       ": expected 'time,ne'");
    }
    knots.push_back(t);
    values.push_back(v);
  }
  return piecewise(std::move(knots), std::move(values));
}

Trajectory Trajectory::parse(const std::string& text) {
  auto colon = text.find(':');
  std::string head = text.substr(0, colon);
  std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (head == "uniform") {
    auto v = split_numbers(arg, ',');
    if (v.size() != 1) throw InputError("uniform trajectory takes one value: uniform:<level>");
    return uniform(v[0]);
  }
  if (head == "exp") {
    auto v = split_numbers(arg, ',');
    if (v.size() != 2) throw InputError("exponential trajectory: exp:<scale>,<rate>");
    return exponential(v[0], v[1]);
  }
  if (head == "boombust") {
    auto v = split_numbers(arg, ',');
    if (v.size() != 2) throw InputError("boom-bust trajectory: boombust:<scale>,<center>");
    return boom_bust(v[0], v[1]);
  }
  if (head == "piecewise" && !arg.empty()) return piecewise_from_csv(arg);
  throw InputError("unknown trajectory '" + text +
                   "' (expected uniform:<l>, exp:<s>,<r>, boombust:<s>,<c>, piecewise:<csv>)");
}

double Trajectory::value(double t) const {
  if (!(t >= 0.0)) throw InputError("trajectory evaluated at negative time");
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Uniform>) {
          return m.level;
        } else if constexpr (std::is_same_v<T, Exponential>) {
          return m.scale * std::exp(-m.rate * t);
        } else if constexpr (std::is_same_v<T, BoomBust>) {
          return m.scale * std::exp(-std::abs(t - m.center));
        } else {
          auto it = std::upper_bound(m.knots.begin(), m.knots.end(), t);
          return m.values[std::max<std::ptrdiff_t>(0, it - m.knots.begin() - 1)];
        }
      },
      v_);
}

double Trajectory::inverse_integral(double t0, double t1) const {
  if (!(t0 >= 0.0) || t1 < t0) throw InputError("bad integration window");
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Uniform>) {
          return (t1 - t0) / m.level;
        } else if constexpr (std::is_same_v<T, Exponential>) {
          if (m.rate == 0.0) return (t1 - t0) / m.scale;
          return (std::exp(m.rate * t1) - std::exp(m.rate * t0)) / (m.rate * m.scale);
        } else if constexpr (std::is_same_v<T, BoomBust>) {
          auto left = [&](double a, double b) {  // both <= center
            return (std::exp(m.center - a) - std::exp(m.center - b)) / m.scale;
          };
          auto right = [&](double a, double b) {  // both >= center
            return (std::exp(b - m.center) - std::exp(a - m.center)) / m.scale;
          };
          if (t1 <= m.center) return left(t0, t1);
          if (t0 >= m.center) return right(t0, t1);
          return left(t0, m.center) + right(m.center, t1);
        } else {
          double total = 0.0;
          for (std::size_t i = 0; i < m.knots.size(); ++i) {
            double lo = std::max(t0, m.knots[i]);
            double hi = (i + 1 < m.knots.size()) ? std::min(t1, m.knots[i + 1]) : t1;
            if (hi > lo) total += (hi - lo) / m.values[i];
          }
          return total;
        }
      },
      v_);
}

double Trajectory::invert_hazard(double t0, double target) const {
  if (!(t0 >= 0.0) || !(target >= 0.0)) throw InputError("bad hazard inversion");
  if (target == 0.0) return 0.0;
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Uniform>) {
          return target * m.level;
        } else if constexpr (std::is_same_v<T, Exponential>) {
          if (m.rate == 0.0) return target * m.scale;
          // exp(r(t0+w)) - exp(r t0) = r * scale * target
          double arg = m.rate * m.scale * target * std::exp(-m.rate * t0);
          if (arg <= -1.0) return kInf;  // shrinking hazard never reaches target
          return std::log1p(arg) / m.rate;
        } else if constexpr (std::is_same_v<T, BoomBust>) {
          double remaining = target;
          if (t0 < m.center) {
            double to_center = (std::exp(m.center - t0) - 1.0) / m.scale;
            if (remaining <= to_center) {
              // exp(center - t0) - exp(center - t) = scale * remaining
              double w = -std::log1p(-m.scale * remaining * std::exp(t0 - m.center));
              return w;
            }
            remaining -= to_center;
            // right branch from the center: exp(t - center) - 1 = scale * remaining
            return (m.center - t0) + std::log1p(m.scale * remaining);
          }
          // pure right branch: exp(t - center) - exp(t0 - center) = scale * remaining
          return std::log1p(m.scale * remaining * std::exp(m.center - t0));
        } else {
          double remaining = target;
          double t = t0;
          for (std::size_t i = 0; i < m.knots.size(); ++i) {
            double hi = (i + 1 < m.knots.size()) ? m.knots[i + 1] : kInf;
            if (hi <= t) continue;
            double lo = std::max(t, m.knots[i]);
            if (hi == kInf) return (lo - t0) + remaining * m.values[i];
            double cap = (hi - lo) / m.values[i];
            if (remaining <= cap) return (lo - t0) + remaining * m.values[i];
            remaining -= cap;
          }
          return kInf;  // unreachable: last cell extends to infinity
        }
      },
      v_);
}

std::string Trajectory::describe() const {
  std::ostringstream os;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Uniform>) {
          os << "uniform:" << m.level;
        } else if constexpr (std::is_same_v<T, Exponential>) {
          os << "exp:" << m.scale << "," << m.rate;
        } else if constexpr (std::is_same_v<T, BoomBust>) {
          os << "boombust:" << m.scale << "," << m.center;
        } else {
          os << "piecewise(" << m.knots.size() << " cells)";
        }
      },
      v_);
  return os.str();
}

int SamplingSchedule::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0);
}

void SamplingSchedule::validate() const {
  if (times.empty() || times.size() != counts.size())
    throw InputError("sampling schedule needs matching, nonempty times and counts");
  if (times[0] != 0.0) throw InputError("sampling schedule must start at time 0");
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (j > 0 && times[j] <= times[j - 1])
      throw InputError("sampling times must increase strictly");
    if (counts[j] < 1) throw InputError("sampling counts must be >= 1");
  }
  if (total() < 2) throw InputError("sampling schedule needs at least 2 tips");
}

SamplingSchedule SamplingSchedule::parse(const std::string& text) {
  SamplingSchedule s;
  if (text.rfind("iso:", 0) == 0) {
    auto v = split_numbers(text.substr(4), ',');
    if (v.size() != 1 || v[0] != std::floor(v[0]))
      throw InputError("isochronous schedule: iso:<count>");
    s.times = {0.0};
    s.counts = {static_cast<int>(v[0])};
    s.validate();
    return s;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos)
      throw InputError("schedule entry '" + item + "' is not time:count");
    auto t = split_numbers(item.substr(0, colon), ',');
    auto c = split_numbers(item.substr(colon + 1), ',');
    if (t.size() != 1 || c.size() != 1 || c[0] != std::floor(c[0]))
      throw InputError("schedule entry '" + item + "' is not time:count");
    s.times.push_back(t[0]);
    s.counts.push_back(static_cast<int>(c[0]));
  }
  s.validate();
  return s;
}

std::string SamplingSchedule::describe() const {
  std::ostringstream os;
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (j > 0) os << ",";
    os << times[j] << ":" << counts[j];
  }
  return os.str();
}

Genealogy simulate(const SamplingSchedule& schedule, const Trajectory& traj,
                   const RateTable& rates, Rng& rng) {
  schedule.validate();
  const int n = schedule.total();
  if (rates.b_max() < n) throw InputError("rate table too small for the sampling schedule");

  std::vector<Node> nodes;
  nodes.reserve(2 * n);
  std::vector<int> active;
  active.reserve(n);

  std::exponential_distribution<double> exp1(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  double u = 0.0;
  std::size_t batch = 0;
  int tip_counter = 0;
  auto add_batch = [&] {
    u = schedule.times[batch];
    for (int i = 0; i < schedule.counts[batch]; ++i) {
      Node tip;
      tip.time = u;
      tip.label = "t" + std::to_string(++tip_counter);
      active.push_back(static_cast<int>(nodes.size()));
      nodes.push_back(std::move(tip));
    }
    ++batch;
  };
  add_batch();

  while (active.size() > 1 || batch < schedule.times.size()) {
    double candidate = kInf;
    if (active.size() >= 2) {
      int b = static_cast<int>(active.size());
      double target = exp1(rng) / std::exp(rates.total_log_rate(b));
      double w = traj.invert_hazard(u, target);
      candidate = (w == kInf) ? kInf : u + w;
      if (candidate <= u) candidate = std::nextafter(u, kInf);
    }
    if (batch < schedule.times.size() && schedule.times[batch] <= candidate) {
      add_batch();
      continue;
    }
    if (candidate == kInf)
      throw NumericalError("coalescent does not terminate under this trajectory");

    u = candidate;
    int b = static_cast<int>(active.size());
    std::vector<double> pmf = rates.block_size_pmf(b);
    double draw = unif(rng);
    int k = b;
    double acc = 0.0;
    for (int i = 0; i < b - 1; ++i) {
      acc += pmf[i];
      if (draw <= acc) {
        k = i + 2;
        break;
      }
    }
    // pick k distinct lineages: partial Fisher-Yates on the active list
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, b - 1);
      std::swap(active[i], active[pick(rng)]);
    }
    Node merger;
    merger.time = u;
    for (int i = 0; i < k; ++i) {
      merger.children.push_back(active[i]);
      nodes[active[i]].parent = static_cast<int>(nodes.size());
    }
    active.erase(active.begin(), active.begin() + k);
    active.push_back(static_cast<int>(nodes.size()));
    nodes.push_back(std::move(merger));
  }

  return Genealogy(std::move(nodes), active.front());
}

Genealogy simulate(const SamplingSchedule& schedule, const Trajectory& traj,
                   const LambdaMeasure& measure, Rng& rng) {
  schedule.validate();
  RateTable rates(measure, std::max(schedule.total(), 2));
  return simulate(schedule, traj, rates, rng);
}

}  // namespace lambdapop
