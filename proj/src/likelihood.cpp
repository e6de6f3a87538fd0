#include "lambdapop/likelihood.hpp"

#include <algorithm>
#include <cmath>

#include "lambdapop/errors.hpp"

namespace lambdapop {

void ExposureTable::rebuild_rates(const RateTable& rates) {
  if (rates.b_max() < max_lineages)
    throw InputError("rate table too small for this genealogy");
  exposure.assign(n_cells, 0.0);
  for (const Span& s : spans) exposure[s.cell] += s.duration * std::exp(rates.total_log_rate(s.lineages));
  event_log_rate.resize(event_cell.size());
  for (std::size_t k = 0; k < event_cell.size(); ++k)
    event_log_rate[k] = event_log_choose[k] + rates.log_rate(event_lineages[k], event_block[k]);
}

ExposureTable build_exposure(const CoalescentData& data, const SkyGrid& grid,
                             const LambdaMeasure& measure) {
  data.validate();
  if (data.n_events() == 0) throw InputError("need at least one coalescent event");
  const double horizon = data.tmrca();
  if (grid.points.size() < 2 || grid.n_cells() != grid.log_ne.size())
    throw InputError("malformed grid");
  if (grid.points.front() > 1e-12 || grid.points.back() < horizon - 1e-12 * std::max(1.0, horizon))
    throw InputError("grid does not cover the genealogy span");

  ExposureTable t;
  t.n_cells = grid.n_cells();
  t.event_count.assign(t.n_cells, 0);

  // breakpoints: grid points and lineage-count changes, clipped to [0, horizon]
  std::vector<double> cuts;
  cuts.reserve(grid.points.size() + data.sample_times.size() + data.coal_times.size());
  for (double x : grid.points)
    if (x > 0.0 && x < horizon) cuts.push_back(x);
  cuts.insert(cuts.end(), data.sample_times.begin(), data.sample_times.end());
  cuts.insert(cuts.end(), data.coal_times.begin(), data.coal_times.end());
  cuts.push_back(0.0);
  cuts.push_back(horizon);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double lo = cuts[i], hi = cuts[i + 1];
    if (hi <= lo) continue;
    double mid = 0.5 * (lo + hi);
    int a = lineage_count(data, mid);
    t.max_lineages = std::max(t.max_lineages, a);
    if (a < 2) continue;
    t.spans.push_back({grid.cell_index(mid), a, hi - lo});
  }

  for (int k = 0; k < data.n_events(); ++k) {
    double tk = data.coal_times[k];
    int a = lineage_count(data, tk);  // left limit
    int m = data.block_sizes[k];
    int cell = grid.cell_index(tk);
    t.event_cell.push_back(cell);
    t.event_lineages.push_back(a);
    t.event_block.push_back(m);
    t.event_log_choose.push_back(log_choose(a, m));
    ++t.event_count[cell];
  }

  RateTable rates(measure, std::max(t.max_lineages, 2));
  t.rebuild_rates(rates);
  return t;
}

double log_likelihood(const ExposureTable& table, const Eigen::VectorXd& gamma) {
  if (gamma.size() != table.n_cells) throw InputError("gamma length does not match grid");
  double out = 0.0;
  for (std::size_t k = 0; k < table.event_log_rate.size(); ++k)
    out += table.event_log_rate[k] - gamma[table.event_cell[k]];
  for (int d = 0; d < table.n_cells; ++d)
    if (table.exposure[d] != 0.0) out -= table.exposure[d] * std::exp(-gamma[d]);
  return out;
}

Eigen::VectorXd grad_log_likelihood(const ExposureTable& table, const Eigen::VectorXd& gamma) {
  if (gamma.size() != table.n_cells) throw InputError("gamma length does not match grid");
  Eigen::VectorXd g(table.n_cells);
  for (int d = 0; d < table.n_cells; ++d)
    g[d] = table.exposure[d] * std::exp(-gamma[d]) - table.event_count[d];
  return g;
}

double block_size_log_pseudolik(const CoalescentData& data, const RateTable& rates) {
  if (data.n_events() == 0) throw InputError("need at least one coalescent event");
  double out = 0.0;
  for (int k = 0; k < data.n_events(); ++k) {
    int a = lineage_count(data, data.coal_times[k]);
    int m = data.block_sizes[k];
    out += log_choose(a, m) + rates.log_rate(a, m) - rates.total_log_rate(a);
  }
  return out;
}

double block_size_log_pseudolik(const CoalescentData& data, const LambdaMeasure& measure) {
  if (data.n_events() == 0) throw InputError("need at least one coalescent event");
  int b_max = 2;
  for (int k = 0; k < data.n_events(); ++k)
    b_max = std::max(b_max, lineage_count(data, data.coal_times[k]));
  return block_size_log_pseudolik(data, RateTable(measure, b_max));
}

}  // namespace lambdapop
