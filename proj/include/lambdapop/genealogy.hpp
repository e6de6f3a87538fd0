#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lambdapop {

struct Node {
  int parent = -1;  // -1 at the root
  double time = 0.0;  // backward time: 0 at the most recent tip, increasing into the past
  std::vector<int> children;
  std::string label;  // nonempty for tips

  bool is_tip() const { return children.empty(); }
};

// Rooted, dated, possibly multifurcating genealogy. Immutable after construction.
class Genealogy {
 public:
  Genealogy(std::vector<Node> nodes, int root);

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int i) const { return nodes_[i]; }
  int root() const { return root_; }
  int n_tips() const { return n_tips_; }
  double tmrca() const { return nodes_[root_].time; }
  std::vector<int> tips() const;

 private:
  std::vector<Node> nodes_;
  int root_;
  int n_tips_ = 0;

  void validate() const;
};

// Sufficient statistics of a dated genealogy: sampling batches (s, n) and
// coalescent events (t, m), both on backward time.
struct CoalescentData {
  std::vector<double> sample_times;   // strictly increasing, first entry 0
  std::vector<int> sample_counts;     // each >= 1
  std::vector<double> coal_times;     // strictly increasing, all > 0
  std::vector<int> block_sizes;       // each >= 2

  int total_samples() const;
  int n_events() const { return static_cast<int>(coal_times.size()); }
  double tmrca() const { return coal_times.empty() ? 0.0 : coal_times.back(); }

  // Throws InputError if the batch/event bookkeeping is inconsistent.
  void validate() const;
};

// Piecewise-constant count of extant lineages between the breakpoints of a
// CoalescentData. values[i] holds the count on (breakpoints[i], breakpoints[i+1]].
struct LineageStep {
  std::vector<double> breakpoints;
  std::vector<int> values;

  static LineageStep from(const CoalescentData& data);
};

// Number of extant lineages just before u, i.e. the left limit A(u-).
// u is clamped to [0, tmrca]; at u = 0 the batch entering at 0 is counted.
int lineage_count(const CoalescentData& data, double u);

// Parses a rooted Newick string with branch lengths. Unary nodes are spliced
// out; zero-length internal branches are collapsed into multifurcations.
// Without tip dates, tip times are taken from root-to-tip path lengths (most
// recent tip at 0). With tip dates (forward values, larger = more recent),
// tips are anchored at max(date) - date and internal times are checked for
// consistency within 1e-9.
Genealogy parse_newick(const std::string& text,
                       const std::optional<std::map<std::string, double>>& tip_dates = std::nullopt);

// Serializes with round-trip-exact branch lengths, so parse(to_newick(g))
// reproduces times well within the 1e-9 batching tolerance.
std::string to_newick(const Genealogy& g);

// Two-column CSV (label,date); a non-numeric second field on line 1 is
// treated as a header.
std::map<std::string, double> read_tip_dates_csv(const std::string& path);

CoalescentData extract_stats(const Genealogy& g);

}  // namespace lambdapop
