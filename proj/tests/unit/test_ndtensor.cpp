#include <array>
#include <cmath>
#include <functional>
#include <string>

#include <gtest/gtest.h>

#include "dagode/errors.hpp"
#include "dagode/matrix.hpp"
#include "dagode/tape.hpp"
#include "test_support.hpp"

using namespace dagode;
using dagode::testing::fd_gradient;
using dagode::testing::random_matrix;
using dagode::testing::rel_error;

namespace {

using Build = std::function<Var(std::span<const Var>)>;

// Checks the tape gradient of sum(build(inputs) ∘ R) against central
// differences for every input.
double op_gradient_error(const Build& build, const std::vector<Matrix>& inputs, Rng& rng) {
  Matrix weight;
  {
    Tape probe;
    std::vector<Var> vars;
    for (const Matrix& m : inputs) vars.push_back(probe.constant(m));
    const Matrix out = build(vars).value();
    weight = random_matrix(out.rows(), out.cols(), rng, -1.0, 1.0);
  }
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> vars;
    for (const Matrix& m : xs) vars.push_back(t.constant(m));
    return sum(build(vars) * t.constant(weight)).value().item();
  };
  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
  Var loss = sum(build(vars) * tape.constant(weight));
  const auto grads = tape.grad(loss, vars);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Matrix& xk) {
      auto xs = inputs;
      xs[k] = xk;
      return eval(xs);
    };
    worst = std::max(worst, rel_error(grads[k], fd_gradient(f, inputs[k])));
  }
  return worst;
}

}  // namespace

TEST(Matrix, MatmulVariantsAgree) {
  Rng rng(1);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(4, 5, rng);
  const Matrix c = random_matrix(5, 3, rng);
  EXPECT_LT(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-14);
  EXPECT_LT(max_abs_diff(matmul_nt(b, transpose(c)), matmul(b, c)), 1e-14);
  const Matrix m{{1, 2}, {3, 4}};
  EXPECT_EQ(matmul(m, m), (Matrix{{7, 10}, {15, 22}}));
  EXPECT_THROW(matmul(a, a), ContractViolation);
}

TEST(Matrix, ExpOfZeroIsIdentity) { EXPECT_EQ(matrix_exp(Matrix(3, 3)), Matrix::identity(3)); }

TEST(Matrix, ExpOfNilpotentTerminates) {
  EXPECT_LT(max_abs_diff(matrix_exp(Matrix{{0, 1}, {0, 0}}), Matrix{{1, 1}, {0, 1}}), 1e-14);
  // strictly upper triangular 4×4: series ends at N³/6
  Rng rng(2);
  Matrix n(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) n(i, j) = rng.uniform(-1.0, 1.0);
  const Matrix n2 = matmul(n, n);
  const Matrix expected = Matrix::identity(4) + n + 0.5 * n2 + (1.0 / 6.0) * matmul(n2, n);
  EXPECT_LT(max_abs_diff(matrix_exp(n), expected), 1e-14);
}

TEST(Matrix, ExpOfSwapIsHyperbolic) {
  const Matrix e = matrix_exp(Matrix{{0, 1}, {1, 0}});
  EXPECT_NEAR(e(0, 0), std::cosh(1.0), 1e-14);
  EXPECT_NEAR(e(0, 1), std::sinh(1.0), 1e-14);
  EXPECT_NEAR(e(1, 0), std::sinh(1.0), 1e-14);
  EXPECT_NEAR(e(1, 1), std::cosh(1.0), 1e-14);
}

TEST(Matrix, ExpOfDiagonalAndInverse) {
  const Matrix e = matrix_exp(Matrix{{-3, 0}, {0, 5}});
  EXPECT_NEAR(e(0, 0), std::exp(-3.0), 1e-15);
  EXPECT_NEAR(e(1, 1) / std::exp(5.0), 1.0, 1e-13);
  Rng rng(3);
  for (double scale : {0.1, 1.0, 8.0}) {
    const Matrix a = scale * random_matrix(5, 5, rng, -1.0, 1.0);
    const Matrix prod = matmul(matrix_exp(a), matrix_exp(-1.0 * a));
    EXPECT_LT(max_abs_diff(prod, Matrix::identity(5)), 1e-9 * std::exp(scale)) << scale;
  }
  EXPECT_THROW(matrix_exp(Matrix(2, 3)), ContractViolation);
}

TEST(Matrix, CholeskyHandExamples) {
  EXPECT_EQ(cholesky(Matrix::identity(3)).lower, Matrix::identity(3));
  const CholeskyResult r = cholesky(Matrix{{4, 2}, {2, 3}});
  EXPECT_EQ(r.jitter, 0.0);
  EXPECT_NEAR(r.lower(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(r.lower(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(r.lower(1, 1), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(r.lower(0, 1), 0.0);
  // eigenvalues 3 and −1
  EXPECT_THROW(cholesky(Matrix{{1, 2}, {2, 1}}), DecompositionError);
}

TEST(Matrix, CholeskyReconstructsWithJitter) {
  Rng rng(4);
  // rank-deficient Gram matrix forces jitter
  const Matrix g = random_matrix(6, 3, rng);
  const Matrix k = matmul_nt(g, g);
  const CholeskyResult r = cholesky(k);
  EXPECT_GT(r.jitter, 0.0);
  const Matrix rebuilt = matmul_nt(r.lower, r.lower);
  EXPECT_LT(frobenius_norm(rebuilt - (k + r.jitter * Matrix::identity(6))) / frobenius_norm(k), 1e-10);
}

TEST(Tape, PolynomialAndTanhExamples) {
  {
    Tape t;
    Var x = t.variable(Matrix::scalar(3.0));
    const std::array<Var, 1> wrt{x};
    EXPECT_DOUBLE_EQ(t.grad(square(x), wrt)[0].item(), 6.0);
  }
  {
    Tape t;
    Var x = t.variable(Matrix::scalar(0.0));
    const std::array<Var, 1> wrt{x};
    EXPECT_DOUBLE_EQ(t.grad(tanh(2.0 * x), wrt)[0].item(), 2.0);
  }
}

TEST(Tape, NonScalarOutputIsRejected) {
  Tape t;
  Var x = t.variable(Matrix(2, 2, 1.0));
  const std::array<Var, 1> wrt{x};
  EXPECT_THROW(t.grad(x * x, wrt), ContractViolation);
}

TEST(Tape, NanCarriesNodeIndex) {
  Tape t;
  Var x = t.variable(Matrix::scalar(-1.0));
  Var y = t.variable(Matrix::scalar(2.0));
  Var bad = log(x);
  Var loss = sum(bad * y + y);
  const std::array<Var, 2> wrt{x, y};
  try {
    t.grad(loss, wrt);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), bad.id());
  }
}

TEST(Tape, ConstantsReceiveNoGradientWork) {
  Tape t;
  Var c = t.constant(Matrix{{1, 2}});
  Var x = t.variable(Matrix{{3, 4}});
  const std::array<Var, 2> wrt{c, x};
  const auto g = t.grad(sum(c * x), wrt);
  EXPECT_EQ(g[0], Matrix(1, 2));
  EXPECT_EQ(g[1], (Matrix{{1, 2}}));
}

TEST(Tape, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(5);
  auto m = [&](std::size_t r, std::size_t c) { return random_matrix(r, c, rng); };
  auto positive = [&](std::size_t r, std::size_t c) { return random_matrix(r, c, rng, 0.2, 2.0); };
  // abs is checked away from its kink
  auto away_from_zero = [&](std::size_t r, std::size_t c) {
    Matrix a = random_matrix(r, c, rng, 0.2, 2.0);
    for (std::size_t i = 0; i < a.size(); i += 2) a[i] = -a[i];
    return a;
  };
  struct Case {
    std::string name;
    Build build;
    std::vector<Matrix> inputs;
  };
  const std::vector<Case> cases{
      {"add", [](auto v) { return v[0] + v[1]; }, {m(3, 4), m(3, 4)}},
      {"sub", [](auto v) { return v[0] - v[1]; }, {m(3, 4), m(3, 4)}},
      {"hadamard", [](auto v) { return v[0] * v[1]; }, {m(3, 4), m(3, 4)}},
      {"scale", [](auto v) { return 2.5 * v[0]; }, {m(3, 4)}},
      {"add_scalar", [](auto v) { return v[0] + 1.5; }, {m(3, 4)}},
      {"matmul", [](auto v) { return matmul(v[0], v[1]); }, {m(3, 4), m(4, 2)}},
      {"transpose", [](auto v) { return transpose(v[0]); }, {m(3, 4)}},
      {"add_row", [](auto v) { return add_row(v[0], v[1]); }, {m(3, 4), m(1, 4)}},
      {"mul_row", [](auto v) { return mul_row(v[0], v[1]); }, {m(3, 4), m(1, 4)}},
      {"tanh", [](auto v) { return tanh(v[0]); }, {m(3, 4)}},
      {"tanh_prime", [](auto v) { return tanh_prime(v[0]); }, {m(3, 4)}},
      {"elu", [](auto v) { return elu(v[0]); }, {away_from_zero(3, 4)}},
      {"elu_prime", [](auto v) { return elu_prime(v[0]); }, {away_from_zero(3, 4)}},
      {"abs", [](auto v) { return abs(v[0]); }, {away_from_zero(3, 4)}},
      {"square", [](auto v) { return square(v[0]); }, {m(3, 4)}},
      {"exp", [](auto v) { return exp(v[0]); }, {m(3, 4)}},
      {"log", [](auto v) { return log(v[0]); }, {positive(3, 4)}},
      {"sum", [](auto v) { return sum(v[0]); }, {m(3, 4)}},
      {"row_sums", [](auto v) { return row_sums(v[0]); }, {m(3, 4)}},
      {"col_means", [](auto v) { return col_means(v[0]); }, {m(3, 4)}},
      {"trace", [](auto v) { return trace(v[0]); }, {m(4, 4)}},
      {"column", [](auto v) { return column(v[0], 2); }, {m(3, 4)}},
      {"hconcat", [](auto v) { return hconcat(v); }, {m(3, 2), m(3, 1), m(3, 3)}},
      {"slice", [](auto v) { return slice(v[0], 3, 2, 4); }, {m(1, 12)}},
      {"mask_diagonal", [](auto v) { return mask_diagonal(v[0]); }, {m(4, 4)}},
      {"trace_exp_square", [](auto v) { return trace_exp_square(v[0]); }, {m(4, 4)}},
      {"composite",
       [](auto v) { return matmul(tanh(add_row(matmul(v[0], v[1]), v[2])), transpose(v[1])); },
       {m(5, 3), m(3, 4), m(1, 4)}},
  };
  for (const Case& c : cases) EXPECT_LT(op_gradient_error(c.build, c.inputs, rng), 1e-5) << c.name;
}

TEST(Tape, RandomMlpMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<Matrix> inputs{random_matrix(2, 4, rng), random_matrix(4, 6, rng, -1, 1),
                                     random_matrix(1, 6, rng, -1, 1), random_matrix(6, 5, rng, -1, 1),
                                     random_matrix(1, 5, rng, -1, 1), random_matrix(5, 3, rng, -1, 1)};
    const Build mlp = [](std::span<const Var> v) {
      Var h1 = tanh(add_row(matmul(v[0], v[1]), v[2]));
      Var h2 = tanh(add_row(matmul(h1, v[3]), v[4]));
      return matmul(h2, v[5]);
    };
    EXPECT_LT(op_gradient_error(mlp, inputs, rng), 1e-5) << trial;
  }
}
