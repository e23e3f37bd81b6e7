#include <benchmark/benchmark.h>

#include "dagode/acyclicity.hpp"
#include "dagode/graphs.hpp"
#include "dagode/learners.hpp"
#include "dagode/odeflow.hpp"
#include "dagode/scm_datagen.hpp"

using namespace dagode;

namespace {

Matrix random_weights(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(d, d);
  for (double& v : w.data()) v = rng.bernoulli(0.2) ? rng.uniform(-0.5, 0.5) : 0.0;
  return w;
}

Matrix random_batch(std::size_t rows, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(rows, d);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

void BM_HExp(benchmark::State& state) {
  const Matrix w = random_weights(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(h_exp(w));
}
BENCHMARK(BM_HExp)->Arg(5)->Arg(10)->Arg(20)->Arg(50);

void BM_HPoly(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_weights(d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(h_poly(w, 1.0 / static_cast<double>(d)));
}
BENCHMARK(BM_HPoly)->Arg(5)->Arg(10)->Arg(20);

void BM_IsDag(benchmark::State& state) {
  const Matrix w = random_weights(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(is_dag(w));
}
BENCHMARK(BM_IsDag)->Arg(10)->Arg(50);

void BM_CnfLogp(benchmark::State& state) {
  const OdeModel m = OdeModel::initialize(10, {32}, Activation::Tanh, false, 0.1, Rng(4));
  const Matrix x = random_batch(1, 10, 5);
  const auto steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cnf_logp(m, x.row(0), 0.0, 1.0, steps));
}
BENCHMARK(BM_CnfLogp)->Arg(5)->Arg(10)->Arg(40);

// One minibatch objective with its parameter gradient, as the flow learner
// evaluates it.
void BM_CnfBatchGradient(benchmark::State& state) {
  const OdeModel m = OdeModel::initialize(10, {32}, Activation::Tanh, false, 0.1, Rng(6));
  const Matrix x = random_batch(static_cast<std::size_t>(state.range(0)), 10, 7);
  const auto steps = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    Tape t;
    Var theta = t.variable(Matrix::row_vector(m.theta()));
    BoundMlp mlp(m, theta);
    Var loss = sum(cnf_logp_on_tape(mlp, t.constant(x), 0.0, 1.0, steps, Method::Rk4));
    const std::array<Var, 1> wrt{theta};
    benchmark::DoNotOptimize(t.grad(loss, wrt));
  }
}
BENCHMARK(BM_CnfBatchGradient)->Args({64, 5})->Args({64, 10})->Args({256, 10})->Unit(benchmark::kMillisecond);

void BM_AdjointGrad(benchmark::State& state) {
  const OdeModel m = OdeModel::initialize(10, {32}, Activation::Tanh, false, 0.3, Rng(8));
  const std::vector<double> h0(10, 0.5), g(10, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(adjoint_grad(m, h0, 0.0, 1.0, 40, g));
}
BENCHMARK(BM_AdjointGrad);

void BM_JacobianReadout(benchmark::State& state) {
  const OdeModel m = OdeModel::initialize(10, {32}, Activation::Tanh, false, 0.3, Rng(9));
  const Matrix x = random_batch(static_cast<std::size_t>(state.range(0)), 10, 10);
  for (auto _ : state) benchmark::DoNotOptimize(jacobian_readout(m, x));
}
BENCHMARK(BM_JacobianReadout)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_GenGpAnm(benchmark::State& state) {
  Rng rng(11);
  const Dag g = sample_er(10, 1.0, rng);
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Rng r(12);
    benchmark::DoNotOptimize(gen_gp_anm(g, n, r));
  }
}
BENCHMARK(BM_GenGpAnm)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_NotearsLinear(benchmark::State& state) {
  Rng rng(13);
  const Dag g = sample_er(10, 1.0, rng);
  const Dataset data = gen_linear_sem(g, 1000, NoiseKind::GaussianEqualVariance, rng);
  LearnerConfig cfg = LearnerConfig::notears_defaults();
  cfg.standardize = false;
  for (auto _ : state) benchmark::DoNotOptimize(fit_notears_linear(data, cfg));
}
BENCHMARK(BM_NotearsLinear)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace
BENCHMARK_MAIN();
