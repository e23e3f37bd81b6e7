#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "dagode/errors.hpp"
#include "dagode/odeflow.hpp"
#include "test_support.hpp"

using namespace dagode;
using dagode::testing::random_matrix;

namespace {

using Vec = std::vector<double>;

double max_rel(const Vec& a, const Vec& b) {
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / std::max(scale, 1e-12);
}

double std_normal_logpdf(std::span<const double> z) {
  double sq = 0.0;
  for (double v : z) sq += v * v;
  return -0.5 * sq - 0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

const VectorField kDecay = [](double, std::span<const double> h) { return Vec{-h[0]}; };

double decay_error(Method m, std::size_t steps) {
  return std::abs(integrate(kDecay, {1.0}, 0.0, 1.0, steps, m)[0] - std::exp(-1.0));
}

}  // namespace

TEST(Integrate, ZeroFieldReturnsStart) {
  const VectorField zero = [](double, std::span<const double> h) { return Vec(h.size(), 0.0); };
  EXPECT_EQ(integrate(zero, {1.5, -2.0}, 0.0, 3.0, 7, Method::Rk4), (Vec{1.5, -2.0}));
  EXPECT_EQ(integrate(OdeModel::zero(2), {1.5, -2.0}, 0.0, 3.0, 7, Method::Euler), (Vec{1.5, -2.0}));
}

TEST(Integrate, Rk4GrowthMatchesE) {
  const VectorField grow = [](double, std::span<const double> h) { return Vec{h[0]}; };
  EXPECT_NEAR(integrate(grow, {1.0}, 0.0, 1.0, 100, Method::Rk4)[0], std::numbers::e, 1e-8);
}

TEST(Integrate, SingleEulerStepIsResidualUpdate) {
  Rng rng(40);
  const OdeModel m = OdeModel::initialize(3, {5}, Activation::Tanh, false, 1.0, rng);
  const Vec h0{0.3, -0.2, 0.9};
  const Vec f = evaluate(m, h0);
  const Vec out = integrate(m, h0, 0.5, 0.75, 1, Method::Euler);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], h0[i] + 0.25 * f[i]);
}

TEST(Integrate, ErrorRatiosMatchMethodOrder) {
  const double rk = decay_error(Method::Rk4, 10) / decay_error(Method::Rk4, 20);
  EXPECT_GE(rk, 12.0);
  EXPECT_LE(rk, 20.0);
  const double eu = decay_error(Method::Euler, 100) / decay_error(Method::Euler, 200);
  EXPECT_GE(eu, 1.8);
  EXPECT_LE(eu, 2.2);
  // least-squares slope of log error against log step
  const std::array<std::size_t, 4> steps{4, 8, 16, 32};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t s : steps) {
    const double x = std::log(1.0 / s), y = std::log(decay_error(Method::Rk4, s));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (4 * sxy - sx * sy) / (4 * sxx - sx * sx);
  EXPECT_GE(slope, 3.8);
}

TEST(Integrate, BlowUpReportsStep) {
  const VectorField bad = [](double t, std::span<const double> h) { return Vec{t > 0.55 ? std::nan("") : h[0]}; };
  try {
    integrate(bad, {1.0}, 0.0, 1.0, 10, Method::Euler);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.index(), 6u);
  }
  EXPECT_THROW(integrate(kDecay, {1.0}, 0.0, 1.0, 0, Method::Rk4), ContractViolation);
  EXPECT_THROW(integrate(kDecay, {1.0}, 1.0, 1.0, 5, Method::Rk4), ContractViolation);
}

TEST(Adjoint, ZeroIntervalPassesGradientThrough) {
  const OdeModel m = OdeModel::initialize(2, {4}, Activation::Tanh, false, 1.0, Rng(41));
  const Vec g{0.7, -1.1};
  const AdjointResult r = adjoint_grad(m, {0.1, 0.2}, 0.3, 0.3, 10, g);
  EXPECT_EQ(r.dl_dh0, g);
  EXPECT_EQ(r.dl_dtheta, Vec(m.num_params(), 0.0));
}

TEST(Adjoint, LinearDriftMatchesMatrixExponential) {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = random_matrix(3, 3, rng, -1.0, 1.0);
    const Vec g{rng.normal(), rng.normal(), rng.normal()};
    const Vec h0{rng.normal(), rng.normal(), rng.normal()};
    const double t = 1.3;
    const AdjointResult r = adjoint_grad(OdeModel::linear(a), h0, 0.0, t, 40, g);
    const Matrix expected = matmul(matrix_exp(t * transpose(a)), transpose(Matrix::row_vector(g)));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.dl_dh0[i], expected(i, 0), 1e-6);
    // dL/dA for L = gᵀ e^{At} h0, by central differences of the closed form
    for (std::size_t k = 0; k < 9; ++k) {
      auto loss = [&](double eps) {
        Matrix ap = a;
        ap[k] += eps;
        const Matrix h1 = matmul(matrix_exp(t * ap), transpose(Matrix::row_vector(h0)));
        return g[0] * h1(0, 0) + g[1] * h1(1, 0) + g[2] * h1(2, 0);
      };
      EXPECT_NEAR(r.dl_dtheta[k], (loss(1e-6) - loss(-1e-6)) / 2e-6, 1e-5) << k;
    }
  }
}

TEST(Adjoint, MatchesUnrolledBackprop) {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    const OdeModel m = OdeModel::initialize(3, {8}, trial % 2 ? Activation::Elu : Activation::Tanh, trial == 2, 0.7,
                                            rng.split(static_cast<std::uint64_t>(trial)));
    const Vec h0{rng.normal(), rng.normal(), rng.normal()};
    const Vec g{rng.normal(), rng.normal(), rng.normal()};
    const AdjointResult adj = adjoint_grad(m, h0, 0.0, 1.0, 40, g);
    const AdjointResult dir = unrolled_grad(m, h0, 0.0, 1.0, 40, g);
    EXPECT_LT(max_rel(adj.dl_dh0, dir.dl_dh0), 1e-3) << trial;
    EXPECT_LT(max_rel(adj.dl_dtheta, dir.dl_dtheta), 1e-3) << trial;
  }
}

TEST(Adjoint, UnrolledMatchesFiniteDifferences) {
  const OdeModel m = OdeModel::initialize(2, {6}, Activation::Tanh, false, 0.8, Rng(44));
  const Vec h0{0.4, -0.3};
  const Vec g{1.0, 0.5};
  const AdjointResult dir = unrolled_grad(m, h0, 0.0, 1.0, 12, g);
  auto loss = [&](const OdeModel& model, const Vec& start) {
    const Vec h1 = integrate(model, start, 0.0, 1.0, 12, Method::Rk4);
    return g[0] * h1[0] + g[1] * h1[1];
  };
  for (std::size_t k = 0; k < m.num_params(); ++k) {
    Vec up = m.theta(), dn = m.theta();
    up[k] += 1e-6;
    dn[k] -= 1e-6;
    OdeModel mu = m, md = m;
    mu.set_theta(up);
    md.set_theta(dn);
    EXPECT_NEAR(dir.dl_dtheta[k], (loss(mu, h0) - loss(md, h0)) / 2e-6, 1e-6) << k;
  }
}

TEST(Cnf, ZeroDriftIsBaseDensity) {
  const Vec origin{0.0, 0.0};
  EXPECT_NEAR(cnf_logp(OdeModel::zero(2), origin, 0.0, 1.0, 10), -std::log(2.0 * std::numbers::pi), 1e-12);
  const Vec x{0.3, -1.7, 2.2};
  EXPECT_NEAR(cnf_logp(OdeModel::zero(3), x, 0.0, 1.0, 10), std_normal_logpdf(x), 1e-12);
}

TEST(Cnf, AffineDriftMatchesChangeOfVariables) {
  for (const double c : {-0.8, 0.4, 1.5}) {
    for (const double x : {-2.0, 0.1, 1.3}) {
      const Vec xv{x};
      const Vec z{x * std::exp(-c)};
      EXPECT_NEAR(cnf_logp(OdeModel::linear(Matrix{{c}}), xv, 0.0, 1.0, 40), std_normal_logpdf(z) - c, 1e-6);
    }
  }
}

TEST(Cnf, RandomOneDimensionalDensityIntegratesToOne) {
  const OdeModel m = OdeModel::initialize(1, {16}, Activation::Tanh, false, 0.8, Rng(45));
  const std::size_t points = 2001;
  const double lo = -10.0, h = 20.0 / (points - 1);
  double integral = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    const Vec x{lo + h * static_cast<double>(i)};
    const double w = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
    integral += w * std::exp(cnf_logp(m, x, 0.0, 1.0, 40));
  }
  EXPECT_NEAR(integral * h, 1.0, 0.01);
}

TEST(Cnf, FlowKeepsTraceAndMatchesTapeBatch) {
  const OdeModel m = OdeModel::initialize(3, {7, 5}, Activation::Elu, false, 0.6, Rng(46));
  const Vec x{0.5, -0.1, 1.2};
  const FlowResult fr = cnf_flow(m, x, 0.0, 1.0, 8, Method::Rk4, true);
  EXPECT_EQ(fr.trace.rows(), 9u);
  EXPECT_EQ(fr.trace(0, 1), x[1]);
  EXPECT_NEAR(fr.trace(8, 2), fr.z[2], 1e-15);
  EXPECT_TRUE(std::isfinite(fr.logdet));

  const Matrix batch{{0.5, -0.1, 1.2}, {-1.0, 0.3, 0.0}};
  Tape tape;
  BoundMlp mlp(m, tape.constant(Matrix::row_vector(m.theta())));
  const Matrix lp = cnf_logp_on_tape(mlp, tape.constant(batch), 0.0, 1.0, 8, Method::Rk4).value();
  for (std::size_t i = 0; i < 2; ++i) {
    const Vec row(batch.row(i).begin(), batch.row(i).end());
    EXPECT_NEAR(lp(i, 0), cnf_logp(m, row, 0.0, 1.0, 8), 1e-12);
  }
}

TEST(BoundMlp, JacobianColumnsMatchFiniteDifferencesAndTrace) {
  Rng rng(47);
  for (const auto& hidden : {std::vector<std::size_t>{6}, std::vector<std::size_t>{6, 4}}) {
    const OdeModel m = OdeModel::initialize(4, hidden, Activation::Tanh, false, 0.9, rng);
    const Matrix x = random_matrix(3, 4, rng);
    Tape tape;
    BoundMlp mlp(m, tape.constant(Matrix::row_vector(m.theta())));
    const auto fw = mlp.forward(tape.constant(x), 0.0);
    const Matrix tr = mlp.jacobian_trace(fw).value();
    std::vector<double> diag(3, 0.0);
    for (std::size_t k = 0; k < 4; ++k) {
      const Matrix col = mlp.jacobian_column(fw, k).value();
      for (std::size_t i = 0; i < 3; ++i) {
        diag[i] += col(i, k);
        Vec up(x.row(i).begin(), x.row(i).end()), dn = up;
        up[k] += 1e-6;
        dn[k] -= 1e-6;
        const Vec fu = evaluate(m, up), fd = evaluate(m, dn);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(col(i, j), (fu[j] - fd[j]) / 2e-6, 1e-7);
      }
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(tr(i, 0), diag[i], 1e-12);
  }
}

TEST(OdeModel, ShapeChecksAndNamedInitIsPermutationEquivariant) {
  EXPECT_THROW(OdeModel({3, 4, 2}, Activation::Tanh, false, Vec(100)), ContractViolation);
  const OdeModel m = OdeModel::initialize(3, {5}, Activation::Tanh, true, 0.1, Rng(48));
  EXPECT_EQ(m.layer_sizes(), (std::vector<std::size_t>{4, 5, 3}));
  EXPECT_EQ(m.num_params(), 4u * 5 + 5 + 5 * 3 + 3);

  // swapping two names swaps the corresponding inputs and outputs
  const OdeModel a = OdeModel::initialize(3, {5}, Activation::Tanh, false, 0.5, Rng(49), {"A", "B", "C"});
  const OdeModel b = OdeModel::initialize(3, {5}, Activation::Tanh, false, 0.5, Rng(49), {"C", "B", "A"});
  const Vec x{0.3, -0.8, 1.1};
  const Vec xp{1.1, -0.8, 0.3};
  const Vec fa = evaluate(a, x), fb = evaluate(b, xp);
  EXPECT_NEAR(fa[0], fb[2], 1e-14);
  EXPECT_NEAR(fa[1], fb[1], 1e-14);
  EXPECT_NEAR(fa[2], fb[0], 1e-14);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = std::filesystem::temp_directory_path() / "dagode_test_ckpt";
  std::filesystem::create_directories(dir);
  const Checkpoint ck{OdeModel::initialize(3, {4}, Activation::Elu, true, 0.3, Rng(50)), 17, "00ff00ff00ff00ff"};
  save_checkpoint(dir / "m.json", ck);
  const Checkpoint back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(back.model, ck.model);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  {
    std::ofstream(dir / "bad.json") << R"({"format":"dagode-checkpoint","version":99})";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), ParseError);
  std::filesystem::remove_all(dir);
}
