#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dagode/matrix.hpp"
#include "dagode/rng.hpp"

namespace dagode::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

/// Central differences of a scalar function of a matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double step = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix plus = x, minus = x;
    plus[i] += step;
    minus[i] -= step;
    g[i] = (f(plus) - f(minus)) / (2.0 * step);
  }
  return g;
}

/// max_i |a_i − b_i| / max(|a_i|, |b_i|, 0.01). The floor keeps entries that
/// are zero up to finite-difference noise from dominating.
inline double rel_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 0.01}));
  return worst;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  return rel_error(Matrix::row_vector(a), Matrix::row_vector(b));
}

}  // namespace dagode::testing
