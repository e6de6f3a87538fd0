#include "lambdapop/genealogy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lambdapop/errors.hpp"

namespace lambdapop {

namespace {

constexpr double kTimeTol = 1e-9;    // date-consistency slack
constexpr double kEventTol = 1e-12;  // distinct coalescent events must differ by more

struct ParseNode {
  std::vector<int> children;
  std::string label;
  double branch_length = std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;  // input offset, for error messages
};

class NewickParser {
 public:
  explicit NewickParser(const std::string& text) : text_(text) {}

  std::pair<std::vector<ParseNode>, int> run() {
    skip_layout();
    if (eof()) fail("empty input");
    int root = parse_subtree();
    skip_layout();
    if (eof() || text_[pos_] != ';') fail("expected ';'");
    ++pos_;
    skip_layout();
    if (!eof()) fail("trailing characters after ';'");
    return {std::move(nodes_), root};
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
  std::vector<ParseNode> nodes_;

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError("newick parse error at offset " + std::to_string(pos_) + ": " + what);
  }

  bool eof() const { return pos_ >= text_.size(); }

  void skip_layout() {
    while (!eof()) {
      char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == '[') {  // bracket comment
        std::size_t close = text_.find(']', pos_);
        if (close == std::string::npos) fail("unterminated '[' comment");
        pos_ = close + 1;
      } else {
        break;
      }
    }
  }

  int parse_subtree() {
    int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    nodes_[id].pos = pos_;
    if (!eof() && text_[pos_] == '(') {
      ++pos_;
      while (true) {
        skip_layout();
        int child = parse_subtree();
        nodes_[id].children.push_back(child);
        skip_layout();
        if (eof()) fail("unterminated '('");
        if (text_[pos_] == ',') {
          ++pos_;
          continue;
        }
        if (text_[pos_] == ')') {
          ++pos_;
          break;
        }
        fail("expected ',' or ')'");
      }
    }
    skip_layout();
    nodes_[id].label = parse_label();
    skip_layout();
    if (!eof() && text_[pos_] == ':') {
      ++pos_;
      skip_layout();
      nodes_[id].branch_length = parse_number();
    }
    if (nodes_[id].children.empty() && nodes_[id].label.empty()) fail("tip without a label");
    return id;
  }

  std::string parse_label() {
    if (eof()) return {};
    if (text_[pos_] == '\'') {  // quoted label, '' escapes a quote
      ++pos_;
      std::string out;
      while (true) {
        if (eof()) fail("unterminated quoted label");
        char c = text_[pos_++];
        if (c == '\'') {
          if (!eof() && text_[pos_] == '\'') {
            out.push_back('\'');
            ++pos_;
          } else {
            break;
          }
        } else {
          out.push_back(c);
        }
      }
      return out;
    }
    static const std::string kStop = "(),:;[]'";
    std::string out;
    while (!eof()) {
      char c = text_[pos_];
      if (kStop.find(c) != std::string::npos || std::isspace(static_cast<unsigned char>(c))) break;
      out.push_back(c);
      ++pos_;
    }
    return out;
  }

  double parse_number() {
    const char* start = text_.c_str() + pos_;
    char* end = nullptr;
    double v = std::strtod(start, &end);
    if (end == start) fail("expected a branch length");
    pos_ += static_cast<std::size_t>(end - start);
    if (!std::isfinite(v)) fail("branch length not finite");
    return v;
  }
};

// Splices out unary chains and collapses zero-length internal branches so the
// result is strictly multifurcating with positive branch durations.
void normalize(std::vector<ParseNode>& nodes, int& root) {
  // unary nodes: merge onto the single child
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].children.size() != 1) continue;
      int child = nodes[i].children[0];
      if (static_cast<int>(i) == root) {
        root = child;
        nodes[child].branch_length = std::numeric_limits<double>::quiet_NaN();
      } else {
        nodes[child].branch_length += nodes[i].branch_length;  // NaN flags a missing length later
      }
      nodes[i].children.clear();
      for (auto& n : nodes) {
        for (auto& c : n.children) {
          if (c == static_cast<int>(i)) c = child;
        }
      }
      changed = true;
    }
  }
}

struct Built {
  std::vector<Node> nodes;
  int root;
};

Built build_nodes(std::vector<ParseNode>& pn, int proot,
                  const std::optional<std::map<std::string, double>>& tip_dates) {
  // reachable set, preorder from the root
  std::vector<int> order;
  std::vector<int> stack{proot};
  std::vector<int> parent(pn.size(), -1);
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    order.push_back(i);
    for (int c : pn[i].children) {
      parent[c] = i;
      stack.push_back(c);
    }
  }

  for (int i : order) {
    if (i == proot) continue;
    if (std::isnan(pn[i].branch_length))
      throw InputError("newick parse error at offset " + std::to_string(pn[i].pos) +
                       ": missing branch length");
    if (pn[i].branch_length < 0)
      throw InputError("newick parse error at offset " + std::to_string(pn[i].pos) +
                       ": negative branch length");
  }

  // collapse zero-length internal branches into multifurcations
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i : order) {
      if (i == proot || pn[i].children.empty()) continue;
      if (pn[i].branch_length != 0.0) continue;
      int par = parent[i];
      auto& pc = pn[par].children;
      pc.erase(std::remove(pc.begin(), pc.end(), i), pc.end());
      for (int c : pn[i].children) {
        pc.push_back(c);
        parent[c] = par;
      }
      pn[i].children.clear();
      changed = true;
    }
    if (changed) {
      order.clear();
      stack.assign(1, proot);
      while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        order.push_back(i);
        for (int c : pn[i].children) stack.push_back(c);
      }
    }
  }

  std::vector<double> time(pn.size(), 0.0);
  if (!tip_dates) {
    // root-to-tip depths; most recent tip pinned at 0
    std::vector<double> depth(pn.size(), 0.0);
    double max_tip_depth = -std::numeric_limits<double>::infinity();
    for (int i : order) {
      if (i != proot) depth[i] = depth[parent[i]] + pn[i].branch_length;
      if (pn[i].children.empty()) max_tip_depth = std::max(max_tip_depth, depth[i]);
    }
    for (int i : order) time[i] = max_tip_depth - depth[i];
  } else {
    double max_date = -std::numeric_limits<double>::infinity();
    for (const auto& [label, d] : *tip_dates) {
      (void)label;
      max_date = std::max(max_date, d);
    }
    std::vector<bool> have(pn.size(), false);
    for (int i : order) {
      if (!pn[i].children.empty()) continue;
      auto it = tip_dates->find(pn[i].label);
      if (it == tip_dates->end()) throw InputError("no date for tip '" + pn[i].label + "'");
      time[i] = max_date - it->second;
      have[i] = true;
    }
    // postorder: parents after children
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      int i = *it;
      if (i == proot) continue;
      double cand = time[i] + pn[i].branch_length;
      int par = parent[i];
      if (!have[par]) {
        time[par] = cand;
        have[par] = true;
      } else {
        if (std::abs(cand - time[par]) > kTimeTol)
          throw InputError("tip dates inconsistent with branch lengths near '" +
                           (pn[i].label.empty() ? std::string("<internal>") : pn[i].label) + "'");
        time[par] = std::max(time[par], cand);
      }
    }
  }

  // reindex to a compact arena
  std::vector<int> remap(pn.size(), -1);
  Built out;
  for (int i : order) {
    remap[i] = static_cast<int>(out.nodes.size());
    Node n;
    n.time = time[i];
    n.label = pn[i].children.empty() ? pn[i].label : std::string{};
    out.nodes.push_back(std::move(n));
  }
  for (int i : order) {
    int ni = remap[i];
    for (int c : pn[i].children) {
      out.nodes[ni].children.push_back(remap[c]);
      out.nodes[remap[c]].parent = ni;
    }
  }
  out.root = remap[proot];
  return out;
}

}  // namespace

Genealogy::Genealogy(std::vector<Node> nodes, int root) : nodes_(std::move(nodes)), root_(root) {
  for (const auto& n : nodes_)
    if (n.is_tip()) ++n_tips_;
  validate();
}

void Genealogy::validate() const {
  if (nodes_.empty()) throw InputError("empty genealogy");
  if (root_ < 0 || root_ >= static_cast<int>(nodes_.size()))
    throw InputError("root index out of range");
  if (nodes_[root_].parent != -1) throw InputError("root has a parent");
  int n_roots = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.parent == -1) {
      ++n_roots;
      continue;
    }
    const Node& p = nodes_[n.parent];
    if (!std::isfinite(n.time) || n.time < 0) throw InputError("node time not finite or negative");
    if (p.time <= n.time) {
      std::ostringstream os;
      os << "node times must increase strictly toward the root (parent " << p.time << " vs child "
         << n.time << ")";
      throw InputError(os.str());
    }
  }
  if (n_roots != 1) throw InputError("genealogy must have exactly one root");
  std::vector<std::string> labels;
  for (const auto& n : nodes_) {
    if (n.children.size() == 1) throw InputError("unary node in genealogy");
    if (n.is_tip()) {
      if (n.label.empty()) throw InputError("unlabeled tip");
      labels.push_back(n.label);
    }
  }
  std::sort(labels.begin(), labels.end());
  auto dup = std::adjacent_find(labels.begin(), labels.end());
  if (dup != labels.end()) throw InputError("duplicate tip label '" + *dup + "'");
  if (n_tips_ < 2) throw InputError("genealogy needs at least two tips");
  if (nodes_[root_].is_tip()) throw InputError("root cannot be a tip");
}

std::vector<int> Genealogy::tips() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].is_tip()) out.push_back(static_cast<int>(i));
  return out;
}

Genealogy parse_newick(const std::string& text,
                       const std::optional<std::map<std::string, double>>& tip_dates) {
  NewickParser parser(text);
  auto [pn, proot] = parser.run();
  normalize(pn, proot);
  Built built = build_nodes(pn, proot, tip_dates);
  return Genealogy(std::move(built.nodes), built.root);
}

namespace {

std::string format_length(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool needs_quoting(const std::string& label) {
  static const std::string kSpecial = "(),:;[]' \t\n";
  for (char c : label)
    if (kSpecial.find(c) != std::string::npos) return true;
  return label.empty();
}

void write_newick(const Genealogy& g, int i, std::string& out) {
  const Node& n = g.node(i);
  if (!n.is_tip()) {
    out.push_back('(');
    for (std::size_t c = 0; c < n.children.size(); ++c) {
      if (c > 0) out.push_back(',');
      write_newick(g, n.children[c], out);
    }
    out.push_back(')');
  } else {
    if (needs_quoting(n.label)) {
      out.push_back('\'');
      for (char c : n.label) {
        out.push_back(c);
        if (c == '\'') out.push_back('\'');
      }
      out.push_back('\'');
    } else {
      out += n.label;
    }
  }
  if (n.parent != -1) {
    out.push_back(':');
    out += format_length(g.node(n.parent).time - n.time);
  }
}

}  // namespace

std::string to_newick(const Genealogy& g) {
  std::string out;
  write_newick(g, g.root(), out);
  out.push_back(';');
  return out;
}

std::map<std::string, double> read_tip_dates_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dates file: " + path);
  std::map<std::string, double> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw InputError("dates file line " + std::to_string(lineno) + ": expected 'label,date'");
    std::string label = line.substr(0, comma);
    std::string value = line.substr(comma + 1);
    char* end = nullptr;
    double d = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || !std::isfinite(d)) {
      if (lineno == 1) continue;  // header row
      throw InputError("dates file line " + std::to_string(lineno) + ": bad date '" + value + "'");
    }
    if (!out.emplace(label, d).second)
      throw InputError("dates file: duplicate label '" + label + "'");
  }
  if (out.empty()) throw InputError("dates file has no entries: " + path);
  return out;
}

int CoalescentData::total_samples() const {
  return std::accumulate(sample_counts.begin(), sample_counts.end(), 0);
}

void CoalescentData::validate() const {
  if (sample_times.empty()) throw InputError("no sampling batches");
  if (sample_times.size() != sample_counts.size() || coal_times.size() != block_sizes.size())
    throw InputError("batch/event arrays have mismatched lengths");
  if (sample_times[0] != 0.0) throw InputError("first sampling batch must sit at time 0");
  for (std::size_t j = 0; j < sample_times.size(); ++j) {
    if (sample_counts[j] < 1) throw InputError("sampling batch with no samples");
    if (j > 0 && sample_times[j] <= sample_times[j - 1])
      throw InputError("sampling times must increase strictly");
  }
  for (std::size_t k = 0; k < coal_times.size(); ++k) {
    if (block_sizes[k] < 2) throw InputError("coalescent event must merge at least two lineages");
    if (coal_times[k] <= (k == 0 ? 0.0 : coal_times[k - 1]))
      throw InputError("coalescent times must increase strictly and be positive");
  }
  int merged = 0;
  for (int m : block_sizes) merged += m - 1;
  if (total_samples() - merged != 1)
    throw InputError("batches and events do not reduce to a single lineage");
  if (coal_times.empty()) {
    if (total_samples() != 1) throw InputError("multiple samples but no coalescent events");
    return;
  }
  if (sample_times.back() >= coal_times.back())
    throw InputError("last sampling batch must precede the final coalescent event");
  // sweep: every event needs enough extant lineages
  std::size_t j = 0;
  int a = 0;
  for (std::size_t k = 0; k < coal_times.size(); ++k) {
    while (j < sample_times.size() && sample_times[j] < coal_times[k]) a += sample_counts[j++];
    if (a < block_sizes[k]) {
      std::ostringstream os;
      os << "event at t=" << coal_times[k] << " merges " << block_sizes[k] << " of " << a
         << " lineages";
      throw InputError(os.str());
    }
    a -= block_sizes[k] - 1;
  }
}

LineageStep LineageStep::from(const CoalescentData& data) {
  data.validate();
  LineageStep out;
  std::size_t j = 0, k = 0;
  int a = 0;
  double prev = -1.0;
  auto push_breakpoint = [&](double u) {
    if (out.breakpoints.empty()) {
      out.breakpoints.push_back(u);
    } else if (u > prev) {
      out.values.push_back(a);
      out.breakpoints.push_back(u);
    }
    prev = u;
  };
  while (j < data.sample_times.size() || k < data.coal_times.size()) {
    bool take_sample = k >= data.coal_times.size() ||
                       (j < data.sample_times.size() && data.sample_times[j] <= data.coal_times[k]);
    if (take_sample) {
      push_breakpoint(data.sample_times[j]);
      a += data.sample_counts[j++];
    } else {
      push_breakpoint(data.coal_times[k]);
      a -= data.block_sizes[k++] - 1;
    }
  }
  push_breakpoint(data.coal_times.empty() ? data.sample_times.back() : data.coal_times.back());
  return out;
}

int lineage_count(const CoalescentData& data, double u) {
  u = std::min(std::max(u, 0.0), data.tmrca());
  if (u <= 0.0) return data.sample_counts.empty() ? 0 : data.sample_counts.front();
  int a = 0;
  auto send = std::lower_bound(data.sample_times.begin(), data.sample_times.end(), u);
  for (auto it = data.sample_times.begin(); it != send; ++it)
    a += data.sample_counts[it - data.sample_times.begin()];
  auto tend = std::lower_bound(data.coal_times.begin(), data.coal_times.end(), u);
  for (auto it = data.coal_times.begin(); it != tend; ++it)
    a -= data.block_sizes[it - data.coal_times.begin()] - 1;
  return a;
}

CoalescentData extract_stats(const Genealogy& g) {
  std::vector<double> tip_times;
  std::vector<std::pair<double, int>> events;  // (time, child count)
  for (const auto& n : g.nodes()) {
    if (n.is_tip())
      tip_times.push_back(n.time);
    else
      events.emplace_back(n.time, static_cast<int>(n.children.size()));
  }
  std::sort(tip_times.begin(), tip_times.end());
  std::sort(events.begin(), events.end());

  CoalescentData d;
  for (double t : tip_times) {
    if (d.sample_times.empty() || t - d.sample_times.back() > kTimeTol) {
      d.sample_times.push_back(t);
      d.sample_counts.push_back(1);
    } else {
      ++d.sample_counts.back();
    }
  }
  if (!d.sample_times.empty() && std::abs(d.sample_times[0]) <= kTimeTol) d.sample_times[0] = 0.0;

  for (std::size_t k = 0; k < events.size(); ++k) {
    if (k > 0 && events[k].first - events[k - 1].first <= kEventTol) {
      std::ostringstream os;
      os << "simultaneous coalescent events at t=" << events[k].first
         << " (separate them by more than " << kEventTol << ")";
      throw InputError(os.str());
    }
    d.coal_times.push_back(events[k].first);
    d.block_sizes.push_back(events[k].second);
  }
  d.validate();
  return d;
}

}  // namespace lambdapop
