#include "dagode/graphs.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "dagode/errors.hpp"

namespace dagode {

namespace {

std::vector<std::size_t> topological_order(std::size_t d, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::size_t>> children(d);
  std::vector<std::size_t> indegree(d, 0);
  for (const Edge& e : edges) {
    children[e.parent].push_back(e.child);
    ++indegree[e.child];
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < d; ++v)
    if (indegree[v] == 0) ready.push(v);
  std::vector<std::size_t> order;
  order.reserve(d);
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    order.push_back(v);
    for (std::size_t c : children[v])
      if (--indegree[c] == 0) ready.push(c);
  }
  return order;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  if (line.find('\t') != std::string::npos) {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) {
      f = trim(f);
      if (!f.empty()) out.push_back(f);
    }
  } else {
    std::stringstream ss(line);
    std::string f;
    while (ss >> f) out.push_back(f);
  }
  return out;
}

}  // namespace

Dag::Dag(std::size_t d, std::vector<Edge> edges) : d_(d), edges_(std::move(edges)), dense_(d * d, 0) {
  for (const Edge& e : edges_) {
    if (e.parent >= d_ || e.child >= d_) throw ContractViolation("Dag: edge endpoint out of range");
    if (e.parent == e.child) throw ContractViolation("Dag: self-loop");
    if (dense_[e.parent * d_ + e.child]) throw ContractViolation("Dag: duplicate edge");
    dense_[e.parent * d_ + e.child] = 1;
  }
  std::sort(edges_.begin(), edges_.end());
  order_ = topological_order(d_, edges_);
  if (order_.size() != d_) throw ContractViolation("Dag: edge set contains a directed cycle");
}

Dag::Dag(std::size_t d, std::vector<Edge> edges, std::vector<std::size_t> order) : Dag(d, std::move(edges)) {
  if (order.size() != d_) throw ContractViolation("Dag: order is not a permutation");
  std::vector<std::size_t> position(d_, d_);
  for (std::size_t i = 0; i < d_; ++i) {
    if (order[i] >= d_ || position[order[i]] != d_) throw ContractViolation("Dag: order is not a permutation");
    position[order[i]] = i;
  }
  for (const Edge& e : edges_)
    if (position[e.parent] >= position[e.child]) throw ContractViolation("Dag: edge violates the given order");
  order_ = std::move(order);
}

Dag Dag::from_adjacency(const Matrix& m) {
  if (!m.square()) throw ContractViolation("Dag::from_adjacency: matrix is not square");
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) edges.push_back({i, j});
  return Dag(m.rows(), std::move(edges));
}

bool Dag::has_edge(std::size_t parent, std::size_t child) const {
  return parent < d_ && child < d_ && dense_[parent * d_ + child] != 0;
}

std::vector<std::size_t> Dag::parents(std::size_t child) const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < d_; ++p)
    if (dense_[p * d_ + child]) out.push_back(p);
  return out;
}

Matrix Dag::adjacency() const {
  Matrix m(d_, d_);
  for (const Edge& e : edges_) m(e.parent, e.child) = 1.0;
  return m;
}

Dag sample_er(std::size_t d, double k, Rng& rng) {
  if (d < 2) throw ContractViolation("sample_er: need at least 2 nodes");
  if (!(k >= 0.0)) throw ContractViolation("sample_er: negative edge factor");
  const double p = std::min(1.0, 2.0 * k / static_cast<double>(d - 1));
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (rng.uniform() < p) edges.push_back({order[i], order[j]});
  return Dag(d, std::move(edges), std::move(order));
}

bool is_dag(const Matrix& m) {
  if (!m.square()) throw ContractViolation("is_dag: matrix is not square");
  const std::size_t d = m.rows();
  enum Color : char { White, Grey, Black };
  std::vector<Color> color(d, White);
  // iterative DFS: stack of (node, next child to visit)
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t root = 0; root < d; ++root) {
    if (color[root] != White) continue;
    stack.push_back({root, 0});
    color[root] = Grey;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      if (next == d) {
        color[v] = Black;
        stack.pop_back();
        continue;
      }
      const std::size_t c = next++;
      if (m(v, c) == 0.0) continue;
      if (color[c] == Grey) return false;
      if (color[c] == White) {
        color[c] = Grey;
        stack.push_back({c, 0});
      }
    }
  }
  return true;
}

Metrics shd(const Dag& pred, const Dag& truth) {
  if (pred.num_nodes() != truth.num_nodes()) throw ContractViolation("shd: node counts differ");
  Metrics m;
  m.predicted_edges = pred.num_edges();
  m.true_edges = truth.num_edges();
  for (const Edge& e : truth.edges()) {
    if (pred.has_edge(e.parent, e.child)) {
      ++m.correct;
    } else if (pred.has_edge(e.child, e.parent)) {
      ++m.reversed;
    } else {
      ++m.missing;
    }
  }
  for (const Edge& e : pred.edges())
    if (!truth.has_edge(e.parent, e.child) && !truth.has_edge(e.child, e.parent)) ++m.extra;
  m.shd = m.reversed + m.missing + m.extra;
  m.tpr = m.true_edges == 0 ? 1.0 : static_cast<double>(m.correct) / static_cast<double>(m.true_edges);
  return m;
}

NamedDag parse_edge_list(const std::string& text, const std::vector<std::string>& names) {
  std::vector<std::string> declared;
  std::vector<std::pair<std::pair<std::string, std::string>, std::size_t>> raw;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const std::string body = trim(t.substr(1));
      if (body.rfind("nodes:", 0) == 0) {
        if (!declared.empty()) throw ParseError("edge list: duplicate node declaration", lineno);
        declared = split_fields(body.substr(6));
        if (declared.empty()) throw ParseError("edge list: empty node declaration", lineno);
      }
      continue;
    }
    auto fields = split_fields(t);
    if (fields.size() != 2) throw ParseError("edge list: expected PARENT<TAB>CHILD", lineno);
    raw.push_back({{fields[0], fields[1]}, lineno});
  }

  NamedDag out;
  out.declared_nodes = !declared.empty();
  const bool fixed = out.declared_nodes || !names.empty();
  out.names = out.declared_nodes ? declared : names;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < out.names.size(); ++i) {
    if (!index.emplace(out.names[i], i).second) throw ParseError("edge list: duplicate node name " + out.names[i], 0);
  }
  auto lookup = [&](const std::string& name, std::size_t ln) {
    auto it = index.find(name);
    if (it != index.end()) return it->second;
    if (fixed) throw ParseError("edge list: unknown node " + name, ln);
    out.names.push_back(name);
    index.emplace(name, out.names.size() - 1);
    return out.names.size() - 1;
  };
  std::vector<Edge> edges;
  for (const auto& [pair, ln] : raw) {
    const std::size_t p = lookup(pair.first, ln);
    const std::size_t c = lookup(pair.second, ln);
    edges.push_back({p, c});
  }
  try {
    out.dag = Dag(out.names.size(), std::move(edges));
  } catch (const ContractViolation& e) {
    throw ParseError(std::string("edge list: ") + e.what(), 0);
  }
  return out;
}

NamedDag read_edge_list(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open edge list " + path.string(), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_edge_list(ss.str(), names);
}

std::string format_edge_list(const Dag& dag, const std::vector<std::string>& names) {
  if (names.size() != dag.num_nodes()) throw ContractViolation("format_edge_list: name count differs from node count");
  std::ostringstream out;
  out << "# nodes:";
  for (const auto& n : names) out << '\t' << n;
  out << '\n';
  for (const Edge& e : dag.edges()) out << names[e.parent] << '\t' << names[e.child] << '\n';
  return out.str();
}

void write_edge_list(const std::filesystem::path& path, const Dag& dag, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write edge list " + path.string(), 0);
  out << format_edge_list(dag, names);
}

}  // namespace dagode
