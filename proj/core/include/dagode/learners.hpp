#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dagode/acyclicity.hpp"
#include "dagode/dataset.hpp"
#include "dagode/graphs.hpp"
#include "dagode/odeflow.hpp"

namespace dagode {

enum class GradientMode { Direct, Adjoint };
enum class InnerSolver { Adam, Lbfgs };

std::string to_string(GradientMode m);
GradientMode parse_gradient_mode(const std::string& s);
std::string to_string(InnerSolver s);
InnerSolver parse_inner_solver(const std::string& s);

struct LearnerConfig {
  // Sparsity weight: ℓ1 on W (linear) or on the off-diagonal of J̄ (flow).
  double lambda1 = 0.1;
  // Penalty schedule and stopping rule.
  double rho0 = 1.0;
  double rho_mult = 10.0;
  double rho_max = 1e16;
  double h_tol = 1e-8;
  std::size_t max_outer = 20;
  // Inner optimizer. Adam uses exactly inner_steps steps at rate lr (decayed
  // 100× over the solve); L-BFGS stops earlier once the projected gradient
  // or the decrease becomes negligible.
  InnerSolver solver = InnerSolver::Adam;
  std::size_t inner_steps = 300;
  double lr = 1e-2;
  // Edge cutoff ω. Unset: 0.3 for the linear learner, largest log-gap for
  // the flow learner.
  std::optional<double> threshold;
  std::uint64_t seed = 0;
  bool standardize = true;
  ConstraintForm constraint = ConstraintForm::Exp;

  // Flow learner only.
  std::vector<std::size_t> hidden{32};
  Activation activation = Activation::Tanh;
  bool time_conditioned = false;
  double init_scale = 0.1;
  std::size_t ode_steps = 40;
  Method method = Method::Rk4;
  double t1 = 1.0;
  std::size_t batch_size = 256;
  std::size_t chunk_size = 64;
  std::size_t threads = 1;
  GradientMode gradient = GradientMode::Direct;

  static LearnerConfig notears_defaults();
  static LearnerConfig dag_ode_defaults();
  /// Throws ContractViolation on out-of-range fields.
  void validate() const;
};

struct TraceEntry {
  std::size_t outer_iter = 0;
  double loss = 0.0;
  double h = 0.0;
  double rho = 0.0;
  double lambda = 0.0;
};

struct FitResult {
  /// Effective weighted adjacency indexed (parent, child), nonnegative:
  /// |W| for the linear learner, J̄ᵀ with zero diagonal for the flow learner.
  Matrix adjacency;
  /// Raw J̄[j,k] = mean |∂f_j/∂x_k| (flow learner), diagonal included.
  Matrix jbar;
  Dag dag;
  double threshold = 0.0;
  double h_final = 0.0;
  bool converged = false;
  std::vector<TraceEntry> trace;
  std::vector<double> first_solve_objective;
  std::optional<OdeModel> model;
};

class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, std::vector<TraceEntry> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<TraceEntry>& trace() const noexcept { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/// J̄[j,k] = (1/n) Σ_i |∂f_j/∂x_k| at each data row, using d reverse passes
/// per row. The diagonal is reported as is.
Matrix jacobian_readout(const Drift& model, const Dataset& data);
Matrix jacobian_readout(const Drift& model, const Matrix& x);

struct ValueGrad {
  double value = 0.0;
  std::vector<double> grad;
};

/// Objective and equality constraint over one parameter vector. `step` names
/// the inner iteration (for minibatch selection); nullopt asks for the
/// full-data value.
struct AlProblem {
  using Map = std::function<ValueGrad(std::span<const double> theta, std::optional<std::size_t> step)>;
  std::vector<double> theta0;
  Map objective;
  Map constraint;
  /// Optional box constraints, enforced by projection after every step.
  std::vector<double> lower;
  std::vector<double> upper;
};

struct AlResult {
  std::vector<double> theta;
  double objective = 0.0;
  double h = 0.0;
  double rho = 0.0;
  double lambda = 0.0;
  bool converged = false;
  std::size_t outer_iterations = 0;
  /// One entry per outer iteration.
  std::vector<TraceEntry> trace;
  /// Unpenalized objective at every inner evaluation of the first solve, on
  /// that evaluation's minibatch.
  std::vector<double> first_solve_objective;
};

/// Method of multipliers: each outer iteration minimizes
/// objective + (ρ/2)h² + λh from the previous solution with the configured
/// inner solver, then sets λ ← λ + ρh. ρ ← ρ·rho_mult whenever |h| shrank by
/// less than 4× over the iteration. Stops when |h| ≤ h_tol, ρ > rho_max, or
/// after max_outer iterations.
/// Throws OptimizationError if the objective becomes non-finite.
AlResult augmented_lagrangian(const AlProblem& problem, const LearnerConfig& cfg);

/// Keeps off-diagonal entries with |w| > ω, then drops kept edges in
/// increasing magnitude until the support is acyclic. w is (parent, child).
Dag threshold(const Matrix& w, double omega);

/// Cutoff at the largest gap between consecutive sorted off-diagonal
/// entries on a log scale (geometric midpoint of the gap). Only gaps whose
/// upper entry is at least 1% of the largest entry are considered.
double largest_gap_threshold(const Matrix& w);

/// Linear SEM: min (1/2n)‖X − XW‖² + λ1‖W‖₁ s.t. h(W) = 0, with W split
/// into nonnegative parts.
FitResult fit_notears_linear(const Dataset& data, const LearnerConfig& cfg);

/// Flow learner: max mean log p(x) − λ1‖offdiag J̄‖₁ s.t. h(J̄) = 0, where
/// the drift is an MLP trained as a continuous normalizing flow and J̄ is
/// recomputed on every minibatch.
FitResult fit_dag_ode(const Dataset& data, const LearnerConfig& cfg);

}  // namespace dagode
