#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <thread>

#include "dagode/errors.hpp"
#include "dagode/learners.hpp"

namespace dagode {

namespace {

using Vec = std::vector<double>;

Vec to_vector(const Matrix& m) { return Vec(m.data().begin(), m.data().end()); }

Matrix take_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  return out;
}

// Batch CNF as one flat state [z (B·d, row-major), ℓ (B)] so the generic
// adjoint solver can run it. Time is reversed (s = −t) because the solver
// integrates forward while the flow runs from t1 back to t0.
class CnfDrift : public Drift {
 public:
  CnfDrift(const OdeModel& model, std::size_t rows) : model_(model), rows_(rows) {}
  std::size_t dim() const override { return rows_ * model_.dim() + rows_; }
  std::size_t num_params() const override { return model_.num_params(); }
  std::vector<double> params() const override { return model_.theta(); }
  TapeField bind(Var theta) const override {
    auto mlp = std::make_shared<BoundMlp>(model_, theta);
    const std::size_t b = rows_;
    const std::size_t d = model_.dim();
    return [mlp, b, d](Var state, double s) {
      Var z = slice(state, 0, b, d);
      const auto fw = mlp->forward(z, -s);
      const std::array<Var, 2> parts{slice(-fw.output, 0, 1, b * d), slice(-mlp->jacobian_trace(fw), 0, 1, b)};
      return hconcat(parts);
    };
  }

 private:
  const OdeModel& model_;
  std::size_t rows_;
};

struct ChunkResult {
  double logp_sum = 0.0;
  Vec grad;  // ∂(Σ logp)/∂θ
};

ChunkResult chunk_direct(const OdeModel& model, const Matrix& x, const LearnerConfig& cfg, bool want_grad) {
  Tape tape;
  Var th = want_grad ? tape.variable(Matrix::row_vector(model.theta())) : tape.constant(Matrix::row_vector(model.theta()));
  BoundMlp mlp(model, th);
  Var total = sum(cnf_logp_on_tape(mlp, tape.constant(x), 0.0, cfg.t1, cfg.ode_steps, cfg.method));
  ChunkResult out{total.value().item(), {}};
  if (want_grad) {
    const std::array<Var, 1> wrt{th};
    out.grad = to_vector(tape.grad(total, wrt).front());
  }
  return out;
}

ChunkResult chunk_adjoint(const OdeModel& model, const Matrix& x, const LearnerConfig& cfg, bool want_grad) {
  const std::size_t b = x.rows();
  const std::size_t d = x.cols();
  CnfDrift drift(model, b);
  Vec h0(b * d + b, 0.0);
  std::copy(x.data().begin(), x.data().end(), h0.begin());
  const Vec h1 = integrate(drift, h0, -cfg.t1, 0.0, cfg.ode_steps, cfg.method);
  const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  ChunkResult out;
  // dΣlogp/dz0 = −z0, dΣlogp/dℓ = 1
  Vec loss_grad(h1.size());
  for (std::size_t i = 0; i < b; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double z = h1[i * d + c];
      sq += z * z;
      loss_grad[i * d + c] = -z;
    }
    out.logp_sum += log_norm - 0.5 * sq + h1[b * d + i];
    loss_grad[b * d + i] = 1.0;
  }
  if (want_grad) out.grad = adjoint_grad(drift, h0, -cfg.t1, 0.0, cfg.ode_steps, loss_grad, cfg.method).dl_dtheta;
  return out;
}

// Σ logp over rows of x and its θ-gradient. Rows are cut into fixed chunks
// that are reduced in chunk order whatever the thread count.
ChunkResult batch_logp(const OdeModel& model, const Matrix& x, const LearnerConfig& cfg, bool want_grad) {
  const std::size_t n = x.rows();
  const std::size_t chunks = (n + cfg.chunk_size - 1) / cfg.chunk_size;
  std::vector<ChunkResult> parts(chunks);
  std::vector<std::exception_ptr> errors(chunks);
  auto run = [&](std::size_t c) {
    try {
      const std::size_t lo = c * cfg.chunk_size;
      const std::size_t hi = std::min(n, lo + cfg.chunk_size);
      std::vector<std::size_t> idx(hi - lo);
      std::iota(idx.begin(), idx.end(), lo);
      const Matrix xc = take_rows(x, idx);
      parts[c] = cfg.gradient == GradientMode::Direct ? chunk_direct(model, xc, cfg, want_grad)
                                                      : chunk_adjoint(model, xc, cfg, want_grad);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(cfg.threads, chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run(c);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += workers) run(c);
      });
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  ChunkResult total;
  if (want_grad) total.grad.assign(model.num_params(), 0.0);
  for (const ChunkResult& p : parts) {
    total.logp_sum += p.logp_sum;
    if (want_grad)
      for (std::size_t i = 0; i < p.grad.size(); ++i) total.grad[i] += p.grad[i];
  }
  return total;
}

struct JacobianTerm {
  Matrix jbar;
  double value = 0.0;
  Vec grad;
};

enum class JacobianUse { Sparsity, Constraint };

JacobianTerm jacobian_term(const OdeModel& model, const Matrix& x, const LearnerConfig& cfg, JacobianUse use) {
  Tape tape;
  Var th = tape.variable(Matrix::row_vector(model.theta()));
  BoundMlp mlp(model, th);
  Var off = mask_diagonal(mlp.mean_abs_jacobian(tape.constant(x)));
  Var out = use == JacobianUse::Sparsity ? sum(off) : h_constraint(off, cfg.constraint);
  const std::array<Var, 1> wrt{th};
  return {off.value(), out.value().item(), to_vector(tape.grad(out, wrt).front())};
}

}  // namespace

FitResult fit_dag_ode(const Dataset& data, const LearnerConfig& cfg) {
  validate(data);
  cfg.validate();
  const std::size_t n = data.n();
  const std::size_t d = data.d();
  const Matrix x = cfg.standardize ? standardize(data.x) : data.x;
  const Rng root(cfg.seed);
  OdeModel model = OdeModel::initialize(d, cfg.hidden, cfg.activation, cfg.time_conditioned, cfg.init_scale,
                                        root.split("init"), data.names);
  const Rng batch_root = root.split("batch");

  auto rows_for = [&](std::optional<std::size_t> step) {
    if (!step || cfg.batch_size >= n) return x;
    Rng g = batch_root.split(static_cast<std::uint64_t>(*step));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // partial Fisher-Yates: first batch_size entries are a uniform subset
    for (std::size_t i = 0; i < cfg.batch_size; ++i) std::swap(idx[i], idx[i + g.below(n - i)]);
    idx.resize(cfg.batch_size);
    std::sort(idx.begin(), idx.end());
    return take_rows(x, idx);
  };

  AlProblem problem;
  problem.theta0 = model.theta();
  problem.objective = [&](std::span<const double> theta, std::optional<std::size_t> step) {
    OdeModel m = model;
    m.set_theta(Vec(theta.begin(), theta.end()));
    const Matrix xb = rows_for(step);
    const double b = static_cast<double>(xb.rows());
    const ChunkResult lp = batch_logp(m, xb, cfg, true);
    if (!std::isfinite(lp.logp_sum)) throw NumericError("fit_dag_ode: non-finite log-density", step.value_or(0));
    const JacobianTerm sparsity = jacobian_term(m, xb, cfg, JacobianUse::Sparsity);
    ValueGrad vg{-lp.logp_sum / b + cfg.lambda1 * sparsity.value, Vec(theta.size())};
    for (std::size_t i = 0; i < theta.size(); ++i) vg.grad[i] = -lp.grad[i] / b + cfg.lambda1 * sparsity.grad[i];
    return vg;
  };
  problem.constraint = [&](std::span<const double> theta, std::optional<std::size_t> step) {
    OdeModel m = model;
    m.set_theta(Vec(theta.begin(), theta.end()));
    const JacobianTerm h = jacobian_term(m, rows_for(step), cfg, JacobianUse::Constraint);
    return ValueGrad{h.value, h.grad};
  };

  const AlResult al = augmented_lagrangian(problem, cfg);
  model.set_theta(al.theta);

  FitResult out;
  {
    Tape tape;
    BoundMlp mlp(model, tape.constant(Matrix::row_vector(model.theta())));
    out.jbar = mlp.mean_abs_jacobian(tape.constant(x)).value();
  }
  out.adjacency = transpose(zero_diagonal(out.jbar));
  out.threshold = cfg.threshold.value_or(largest_gap_threshold(out.adjacency));
  out.dag = threshold(out.adjacency, out.threshold);
  out.h_final = h_jacobian(out.jbar).h;
  out.converged = al.converged;
  out.trace = al.trace;
  out.first_solve_objective = al.first_solve_objective;
  out.model = std::move(model);
  return out;
}

}  // namespace dagode
