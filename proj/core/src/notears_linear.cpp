#include <array>
#include <cmath>
#include <limits>

#include "dagode/errors.hpp"
#include "dagode/learners.hpp"

namespace dagode {

FitResult fit_notears_linear(const Dataset& data, const LearnerConfig& cfg) {
  validate(data);
  cfg.validate();
  const std::size_t d = data.d();
  const double n = static_cast<double>(data.n());
  const Matrix x = cfg.standardize ? standardize(data.x) : data.x;
  const Matrix cov = matmul_tn(x, x) * (1.0 / n);
  const Matrix eye = Matrix::identity(d);

  // θ = [W⁺, W⁻], W = W⁺ − W⁻, both nonnegative with zero diagonal.
  AlProblem problem;
  problem.theta0.assign(2 * d * d, 0.0);
  problem.lower.assign(2 * d * d, 0.0);
  problem.upper.assign(2 * d * d, std::numeric_limits<double>::infinity());
  for (std::size_t part = 0; part < 2; ++part)
    for (std::size_t i = 0; i < d; ++i) problem.upper[part * d * d + i * d + i] = 0.0;

  auto weights = [d](Var theta) { return slice(theta, 0, d, d) - slice(theta, d * d, d, d); };
  auto to_vector = [](const Matrix& m) { return std::vector<double>(m.data().begin(), m.data().end()); };

  problem.objective = [&](std::span<const double> theta, std::optional<std::size_t>) {
    Tape tape;
    Var th = tape.variable(Matrix::row_vector(theta));
    Var resid = tape.constant(eye) - weights(th);
    // (1/2n)‖X − XW‖² = ½ Tr((I−W)ᵀ C (I−W)) with C = XᵀX/n
    Var loss = 0.5 * trace(matmul(transpose(resid), matmul(tape.constant(cov), resid))) + cfg.lambda1 * sum(th);
    const std::array<Var, 1> wrt{th};
    return ValueGrad{loss.value().item(), to_vector(tape.grad(loss, wrt).front())};
  };
  problem.constraint = [&](std::span<const double> theta, std::optional<std::size_t>) {
    Tape tape;
    Var th = tape.variable(Matrix::row_vector(theta));
    Var h = h_constraint(weights(th), cfg.constraint);
    const std::array<Var, 1> wrt{th};
    return ValueGrad{h.value().item(), to_vector(tape.grad(h, wrt).front())};
  };

  const AlResult al = augmented_lagrangian(problem, cfg);

  FitResult out;
  Matrix w(d, d);
  for (std::size_t k = 0; k < d * d; ++k) w[k] = al.theta[k] - al.theta[d * d + k];
  out.adjacency = abs(w);
  out.threshold = cfg.threshold.value_or(0.3);
  out.dag = threshold(out.adjacency, out.threshold);
  out.h_final = h_exp(w).h;
  out.converged = al.converged;
  out.trace = al.trace;
  out.first_solve_objective = al.first_solve_objective;
  return out;
}

}  // namespace dagode
