#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dagode/matrix.hpp"
#include "dagode/rng.hpp"

namespace dagode {

struct Edge {
  std::size_t parent = 0;
  std::size_t child = 0;
  auto operator<=>(const Edge&) const = default;
};

/// Directed acyclic graph over nodes 0..d-1 with a topological order.
/// Construction rejects cycles, self-loops and out-of-range endpoints.
class Dag {
 public:
  explicit Dag(std::size_t d = 0) : Dag(d, {}) {}
  Dag(std::size_t d, std::vector<Edge> edges);
  /// Uses `order` as the topological order; every edge must respect it.
  Dag(std::size_t d, std::vector<Edge> edges, std::vector<std::size_t> order);

  /// Nonzero support of `m`, read as m(parent, child).
  static Dag from_adjacency(const Matrix& m);

  std::size_t num_nodes() const noexcept { return d_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  /// Sorted by (parent, child).
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<std::size_t>& order() const noexcept { return order_; }
  bool has_edge(std::size_t parent, std::size_t child) const;
  std::vector<std::size_t> parents(std::size_t child) const;
  /// 0/1 matrix indexed (parent, child).
  Matrix adjacency() const;

  friend bool operator==(const Dag& a, const Dag& b) { return a.d_ == b.d_ && a.edges_ == b.edges_; }

 private:
  std::size_t d_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> order_;
  std::vector<char> dense_;
};

struct Metrics {
  std::size_t shd = 0;
  double tpr = 0.0;
  std::size_t predicted_edges = 0;
  std::size_t true_edges = 0;
  std::size_t correct = 0;
  std::size_t reversed = 0;
  std::size_t missing = 0;
  std::size_t extra = 0;
};

/// Erdős–Rényi DAG with an expected k·d edges: draws a uniform node order,
/// then keeps each order-respecting pair with probability min(1, 2k/(d-1)).
Dag sample_er(std::size_t d, double k, Rng& rng);

/// True iff the nonzero support of `m` (m(i,j) ≠ 0 means i→j) has no
/// directed cycle. Self-loops count as cycles.
bool is_dag(const Matrix& m);
inline bool is_dag(const Dag&) { return true; }

/// Structural Hamming distance of `pred` against `truth`. A reversed edge
/// costs 1. tpr is correctly oriented true edges over true edges, and 1 when
/// the truth has no edges.
Metrics shd(const Dag& pred, const Dag& truth);

/// Graph with node names, as read from or written to edge-list files.
struct NamedDag {
  std::vector<std::string> names;
  Dag dag;
  /// Whether the file declared its node set (`# nodes:` line).
  bool declared_nodes = false;
};

/// Parses `PARENT<TAB>CHILD` lines; `#` starts a comment. A comment of the
/// form `# nodes:<TAB>A<TAB>B...` declares the full node set, including
/// isolated nodes. Without it, names come from `names` when given, otherwise
/// from the edge endpoints in order of first appearance.
NamedDag read_edge_list(const std::filesystem::path& path, const std::vector<std::string>& names = {});
NamedDag parse_edge_list(const std::string& text, const std::vector<std::string>& names = {});
std::string format_edge_list(const Dag& dag, const std::vector<std::string>& names);
void write_edge_list(const std::filesystem::path& path, const Dag& dag, const std::vector<std::string>& names);

}  // namespace dagode
