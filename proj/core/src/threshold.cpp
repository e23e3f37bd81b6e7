#include <algorithm>
#include <cmath>

#include "dagode/errors.hpp"
#include "dagode/learners.hpp"

namespace dagode {

Dag threshold(const Matrix& w, double omega) {
  if (!w.square()) throw ContractViolation("threshold: matrix is not square");
  if (!(omega >= 0.0)) throw ContractViolation("threshold: omega must be nonnegative");
  const std::size_t d = w.rows();
  struct Kept {
    double magnitude;
    Edge edge;
  };
  std::vector<Kept> kept;
  Matrix support(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (i != j && std::abs(w(i, j)) > omega) {
        kept.push_back({std::abs(w(i, j)), {i, j}});
        support(i, j) = 1.0;
      }
  std::stable_sort(kept.begin(), kept.end(), [](const Kept& a, const Kept& b) { return a.magnitude < b.magnitude; });
  std::size_t dropped = 0;
  while (!is_dag(support)) {
    const Edge e = kept[dropped++].edge;
    support(e.parent, e.child) = 0.0;
  }
  return Dag::from_adjacency(support);
}

double largest_gap_threshold(const Matrix& w) {
  if (!w.square()) throw ContractViolation("largest_gap_threshold: matrix is not square");
  std::vector<double> values;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (i != j) values.push_back(std::max(std::abs(w(i, j)), 1e-12));
  if (values.size() < 2) return values.empty() ? 0.0 : values.front();
  std::sort(values.begin(), values.end(), std::greater<>());
  std::size_t best = 0;
  double best_gap = -1.0;
  // Near-zero entries of a Jacobian readout decay smoothly and can hold a
  // wide log gap of their own; only gaps starting within two decades of the
  // largest entry are candidates.
  for (std::size_t i = 0; i + 1 < values.size() && values[i] >= 1e-2 * values.front(); ++i) {
    const double gap = std::log(values[i]) - std::log(values[i + 1]);
    if (gap > best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return std::sqrt(values[best] * values[best + 1]);
}

}  // namespace dagode
