#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dagode/errors.hpp"
#include "dagode/learners.hpp"
#include "dagode/scm_datagen.hpp"
#include "test_support.hpp"

using namespace dagode;
using dagode::testing::random_matrix;

namespace {

using Vec = std::vector<double>;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::size_t above(const Matrix& w, double omega) {
  return static_cast<std::size_t>(std::count_if(w.data().begin(), w.data().end(), [&](double v) { return v > omega; }));
}

LearnerConfig fast_linear() {
  LearnerConfig cfg = LearnerConfig::notears_defaults();
  cfg.standardize = false;
  return cfg;
}

}  // namespace

TEST(JacobianReadout, LinearDriftGivesAbsoluteWeights) {
  Rng rng(60);
  const Matrix a = random_matrix(4, 4, rng, -2.0, 2.0);
  const Matrix x = random_matrix(25, 4, rng);
  const Matrix jbar = jacobian_readout(OdeModel::linear(a), x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(jbar[i], std::abs(a[i]), 1e-14);
  EXPECT_THROW(jacobian_readout(OdeModel::linear(a), random_matrix(3, 5, rng)), ContractViolation);
}

TEST(JacobianReadout, EpidemicSupport) {
  const EpidemicDrift drift{EpidemicParams{}};
  Rng rng(61);
  Matrix x(100, 3);
  for (std::size_t i = 0; i < 100; ++i) x.row(i)[0] = rng.uniform(1, 600), x.row(i)[1] = rng.uniform(1, 100), x.row(i)[2] = rng.uniform(1, 100);
  const Matrix jbar = jacobian_readout(drift, x);
  // rows are outputs: X depends on X,Y,Z; Y on X,Y; Z on Y,Z
  const std::array<std::array<bool, 3>, 3> support{{{true, true, true}, {true, true, false}, {false, true, true}}};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 3; ++k) {
      if (support[j][k])
        EXPECT_GT(jbar(j, k), 1e-3) << j << k;
      else
        EXPECT_LT(jbar(j, k), 1e-12) << j << k;
    }
}

TEST(JacobianReadout, MlpPartialsMatchFiniteDifferences) {
  Rng rng(62);
  for (int trial = 0; trial < 10; ++trial) {
    const OdeModel m = OdeModel::initialize(4, {6}, Activation::Tanh, false, 0.8, rng.split(static_cast<std::uint64_t>(trial)));
    const Matrix x = random_matrix(1, 4, rng);
    const Matrix jbar = jacobian_readout(m, x);
    for (std::size_t k = 0; k < 4; ++k) {
      Vec up(x.row(0).begin(), x.row(0).end()), dn = up;
      up[k] += 1e-5;
      dn[k] -= 1e-5;
      const Vec fu = evaluate(m, up), fd = evaluate(m, dn);
      for (std::size_t j = 0; j < 4; ++j) {
        const double ref = std::abs((fu[j] - fd[j]) / 2e-5);
        EXPECT_LT(std::abs(jbar(j, k) - ref) / std::max(ref, 1e-3), 1e-4) << j << k;
      }
    }
  }
}

TEST(AugmentedLagrangian, QuadraticWithLinearConstraint) {
  AlProblem prob;
  prob.theta0 = {0.0};
  prob.objective = [](std::span<const double> t, std::optional<std::size_t>) { return ValueGrad{t[0] * t[0], {2 * t[0]}}; };
  prob.constraint = [](std::span<const double> t, std::optional<std::size_t>) { return ValueGrad{t[0] - 1.0, {1.0}}; };
  for (InnerSolver solver : {InnerSolver::Lbfgs, InnerSolver::Adam}) {
    LearnerConfig cfg;
    cfg.solver = solver;
    cfg.inner_steps = solver == InnerSolver::Adam ? 2000 : 100;
    cfg.lr = 0.1;
    cfg.h_tol = 1e-6;
    const AlResult r = augmented_lagrangian(prob, cfg);
    EXPECT_NEAR(r.theta[0], 1.0, 1e-4) << to_string(solver);
    // stationarity: 2x + λ = 0 at the solution
    if (r.converged) EXPECT_NEAR(r.lambda, -2.0, 1e-2) << to_string(solver);
  }
}

TEST(AugmentedLagrangian, FeasibleStationaryStartReturnsAfterOneIteration) {
  AlProblem prob;
  prob.theta0 = {0.0, 0.0};
  prob.objective = [](std::span<const double> t, std::optional<std::size_t>) {
    return ValueGrad{t[0] * t[0] + t[1] * t[1], {2 * t[0], 2 * t[1]}};
  };
  prob.constraint = [](std::span<const double> t, std::optional<std::size_t>) {
    return ValueGrad{t[0] * t[1], {t[1], t[0]}};
  };
  for (InnerSolver solver : {InnerSolver::Lbfgs, InnerSolver::Adam}) {
    LearnerConfig cfg;
    cfg.solver = solver;
    const AlResult r = augmented_lagrangian(prob, cfg);
    EXPECT_EQ(r.theta, prob.theta0);
    EXPECT_EQ(r.outer_iterations, 1u);
    EXPECT_EQ(r.trace.size(), 1u);
    EXPECT_TRUE(r.converged);
  }
}

TEST(AugmentedLagrangian, DivergenceRaisesWithTrace) {
  AlProblem prob;
  prob.theta0 = {1.0};
  prob.objective = [](std::span<const double> t, std::optional<std::size_t>) {
    return ValueGrad{t[0] > 1.5 ? std::nan("") : -t[0], {-1.0}};
  };
  prob.constraint = [](std::span<const double>, std::optional<std::size_t>) { return ValueGrad{0.0, {0.0}}; };
  LearnerConfig cfg;
  cfg.lr = 0.1;
  EXPECT_THROW(augmented_lagrangian(prob, cfg), OptimizationError);
}

TEST(AugmentedLagrangian, BoxConstraintsHold) {
  AlProblem prob;
  prob.theta0 = {0.5};
  prob.lower = {0.0};
  prob.upper = {2.0};
  prob.objective = [](std::span<const double> t, std::optional<std::size_t>) { return ValueGrad{t[0], {1.0}}; };
  prob.constraint = [](std::span<const double>, std::optional<std::size_t>) { return ValueGrad{0.0, {0.0}}; };
  for (InnerSolver solver : {InnerSolver::Lbfgs, InnerSolver::Adam}) {
    LearnerConfig cfg;
    cfg.solver = solver;
    EXPECT_EQ(augmented_lagrangian(prob, cfg).theta[0], 0.0) << to_string(solver);
  }
}

TEST(Threshold, Examples) {
  const Matrix w{{0, 0.5}, {0.4, 0}};
  EXPECT_EQ(threshold(w, 0.3), Dag(2, {{0, 1}}));
  EXPECT_EQ(threshold(w, 0.6).num_edges(), 0u);
  // diagonal entries never become edges
  EXPECT_EQ(threshold(Matrix{{9, 0}, {0, 9}}, 0.1).num_edges(), 0u);
  EXPECT_THROW(threshold(w, -1.0), ContractViolation);
}

TEST(Threshold, AlwaysAcyclicAndKeepsOnlyLargeEntries) {
  Rng rng(63);
  for (int s = 0; s < 1000; ++s) {
    const Matrix w = random_matrix(6, 6, rng, -1.0, 1.0);
    const double omega = rng.uniform(0.0, 0.8);
    const Dag g = threshold(w, omega);
    ASSERT_TRUE(is_dag(g.adjacency()));
    for (const Edge& e : g.edges()) ASSERT_GT(std::abs(w(e.parent, e.child)), omega);
  }
}

TEST(Threshold, LargestGapSitsInTheGap) {
  const Matrix w{{0, 0.001, 0.6}, {0.002, 0, 0.9}, {0.0015, 0.003, 0}};
  const double omega = largest_gap_threshold(w);
  EXPECT_GT(omega, 0.003);
  EXPECT_LT(omega, 0.6);
  EXPECT_NEAR(omega, std::sqrt(0.003 * 0.6), 1e-12);
  EXPECT_EQ(threshold(w, omega), Dag(3, {{0, 2}, {1, 2}}));
}

TEST(Threshold, LargestGapIgnoresTheNearZeroTail) {
  // two strong entries, then a tail whose widest log gap lies far below them
  Matrix w(4, 4);
  w(0, 1) = 1.0;
  w(1, 2) = 0.5;
  const std::vector<double> tail{0.06, 0.03, 0.02, 0.012, 0.008, 1e-9, 1e-9, 1e-9, 1e-9, 1e-9};
  std::size_t t = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (i != j && w(i, j) == 0.0) w(i, j) = tail[t++];
  EXPECT_NEAR(largest_gap_threshold(w), std::sqrt(0.5 * 0.06), 1e-12);
}

TEST(NotearsLinear, PureNoiseGivesEmptyGraph) {
  std::vector<double> edges;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Dataset ds = gen_linear_sem(Dag(5), 2000, NoiseKind::GaussianEqualVariance, rng);
    const FitResult r = fit_notears_linear(ds, LearnerConfig::notears_defaults());
    EXPECT_LE(r.dag.num_edges(), 1u) << seed;
    edges.push_back(static_cast<double>(r.dag.num_edges()));
  }
  EXPECT_EQ(median(edges), 0.0);
}

TEST(NotearsLinear, TwoNodeChainWeight) {
  std::vector<double> errors;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    Matrix w(2, 2);
    w(0, 1) = 1.5;
    const Dataset ds = gen_linear_sem(Dag(2, {{0, 1}}), w, 2000, NoiseKind::GaussianEqualVariance, rng);
    LearnerConfig cfg = fast_linear();
    cfg.lambda1 = 0.01;
    const FitResult r = fit_notears_linear(ds, cfg);
    EXPECT_EQ(r.dag, Dag(2, {{0, 1}})) << seed;
    EXPECT_LE(r.h_final, 1e-8);
    errors.push_back(std::abs(r.adjacency(0, 1) - 1.5));
  }
  EXPECT_LT(median(errors), 0.1);
}

TEST(NotearsLinear, TraceIsMonotoneAndConverges) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    Rng gr = rng.split("graph");
    const Dag g = sample_er(8, 1.0, gr);
    const Dataset ds = gen_linear_sem(g, 500, NoiseKind::GaussianEqualVariance, rng);
    const FitResult r = fit_notears_linear(ds, fast_linear());
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i].h, r.trace[i - 1].h) << seed;
    if (r.converged) EXPECT_LE(r.h_final, 1e-8) << seed;
    EXPECT_TRUE(is_dag(r.dag.adjacency()));
  }
}

TEST(NotearsLinear, ColumnPermutationPermutesAdjacency) {
  Rng rng(64);
  Rng gr = rng.split("graph");
  const Dag g = sample_er(6, 1.0, gr);
  const Dataset ds = gen_linear_sem(g, 1000, NoiseKind::GaussianEqualVariance, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};  // new column c holds old column perm[c]
  Dataset pd = ds;
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t c = 0; c < 6; ++c) pd.x(i, c) = ds.x(i, perm[c]);
  pd.truth.reset();
  for (std::size_t c = 0; c < 6; ++c) pd.names[c] = ds.names[perm[c]];
  const FitResult a = fit_notears_linear(ds, fast_linear());
  const FitResult b = fit_notears_linear(pd, fast_linear());
  // summation order differs, so the two solves stop at slightly different points
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(b.adjacency(i, j), a.adjacency(perm[i], perm[j]), 1e-3);
  for (const Edge& e : b.dag.edges()) EXPECT_TRUE(a.dag.has_edge(perm[e.parent], perm[e.child]));
  EXPECT_EQ(a.dag.num_edges(), b.dag.num_edges());
}

TEST(NotearsLinear, DoublingLambdaNeverAddsEdges) {
  std::vector<double> diffs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(300 + seed);
    Rng gr = rng.split("graph");
    const Dataset ds = gen_linear_sem(sample_er(8, 1.0, gr), 500, NoiseKind::GaussianEqualVariance, rng);
    LearnerConfig lo = fast_linear();
    LearnerConfig hi = lo;
    hi.lambda1 = 2 * lo.lambda1;
    const double c_lo = static_cast<double>(above(fit_notears_linear(ds, lo).adjacency, 0.3));
    const double c_hi = static_cast<double>(above(fit_notears_linear(ds, hi).adjacency, 0.3));
    diffs.push_back(c_hi - c_lo);
  }
  EXPECT_LE(median(diffs), 0.0);
}

TEST(DagOde, OneDimensionalGaussianFit) {
  Rng rng(65);
  const std::size_t n = 2000;
  Dataset ds;
  ds.x = Matrix(n, 1);
  ds.names = {"X"};
  for (std::size_t i = 0; i < n; ++i) ds.x(i, 0) = rng.normal(0.0, 2.0);
  LearnerConfig cfg = LearnerConfig::dag_ode_defaults();
  cfg.standardize = false;
  cfg.hidden = {16};
  cfg.ode_steps = 10;
  cfg.inner_steps = 600;
  cfg.lr = 0.03;
  const FitResult r = fit_dag_ode(ds, cfg);
  ASSERT_TRUE(r.model.has_value());
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.h_final, 1e-8);
  double mean = 0, var = 0, fitted = 0;
  for (std::size_t i = 0; i < n; ++i) mean += ds.x(i, 0) / n;
  for (std::size_t i = 0; i < n; ++i) var += std::pow(ds.x(i, 0) - mean, 2) / n;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec row{ds.x(i, 0)};
    fitted += cnf_logp(*r.model, row, 0.0, cfg.t1, cfg.ode_steps, cfg.method) / n;
  }
  // Gaussian MLE log-likelihood per sample
  const double analytic = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5;
  EXPECT_NEAR(fitted, analytic, 0.05);
}

TEST(DagOde, FirstSolveObjectiveMostlyDecreases) {
  Rng rng(66);
  Rng gr = rng.split("graph");
  const Dataset ds = gen_gp_anm(sample_er(10, 1.0, gr), 200, rng);
  LearnerConfig cfg = LearnerConfig::dag_ode_defaults();
  cfg.max_outer = 1;
  cfg.inner_steps = 100;
  cfg.ode_steps = 5;
  cfg.batch_size = 200;
  const FitResult r = fit_dag_ode(ds, cfg);
  ASSERT_EQ(r.first_solve_objective.size(), 100u);
  std::size_t regressions = 0;
  for (std::size_t i = 1; i < r.first_solve_objective.size(); ++i)
    regressions += r.first_solve_objective[i] > r.first_solve_objective[i - 1];
  EXPECT_LE(regressions, 5u);
  EXPECT_LT(r.first_solve_objective.back(), r.first_solve_objective.front());
  EXPECT_TRUE(is_dag(r.dag.adjacency()));
}

TEST(DagOde, DeterministicAcrossThreadCountsAndGradientModes) {
  Rng rng(67);
  Rng gr = rng.split("graph");
  const Dataset ds = gen_gp_anm(sample_er(4, 1.0, gr), 150, rng);
  LearnerConfig cfg = LearnerConfig::dag_ode_defaults();
  cfg.max_outer = 2;
  cfg.inner_steps = 10;
  cfg.ode_steps = 4;
  cfg.batch_size = 100;
  cfg.chunk_size = 16;
  cfg.hidden = {8};
  const FitResult one = fit_dag_ode(ds, cfg);
  cfg.threads = 3;
  const FitResult three = fit_dag_ode(ds, cfg);
  EXPECT_EQ(one.jbar, three.jbar);
  EXPECT_EQ(one.model->theta(), three.model->theta());
  cfg.gradient = GradientMode::Adjoint;
  const FitResult adj = fit_dag_ode(ds, cfg);
  EXPECT_LT(max_abs_diff(one.jbar, adj.jbar), 1e-6);
}

TEST(DagOde, InitializationIsPermutationEquivariant) {
  Rng rng(68);
  const Matrix x = random_matrix(50, 4, rng);
  const std::vector<std::string> names{"A", "B", "C", "D"};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Matrix xp(50, 4);
  std::vector<std::string> np(4);
  for (std::size_t c = 0; c < 4; ++c) {
    np[c] = names[perm[c]];
    for (std::size_t i = 0; i < 50; ++i) xp(i, c) = x(i, perm[c]);
  }
  const OdeModel a = OdeModel::initialize(4, {8}, Activation::Tanh, false, 0.1, Rng(5), names);
  const OdeModel b = OdeModel::initialize(4, {8}, Activation::Tanh, false, 0.1, Rng(5), np);
  const Matrix ja = jacobian_readout(a, x);
  const Matrix jb = jacobian_readout(b, xp);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(jb(i, j), ja(perm[i], perm[j]), 1e-12);
}

TEST(LearnerConfig, ValidationAndNames) {
  LearnerConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.rho_mult = 1.0;
  EXPECT_THROW(cfg.validate(), ContractViolation);
  cfg = LearnerConfig{};
  cfg.threshold = -0.1;
  EXPECT_THROW(cfg.validate(), ContractViolation);
  cfg = LearnerConfig{};
  cfg.h_tol = 0.0;
  EXPECT_THROW(cfg.validate(), ContractViolation);
  EXPECT_EQ(parse_inner_solver(to_string(InnerSolver::Lbfgs)), InnerSolver::Lbfgs);
  EXPECT_EQ(parse_gradient_mode(to_string(GradientMode::Adjoint)), GradientMode::Adjoint);
  EXPECT_THROW(parse_inner_solver("sgd"), ContractViolation);
}
