#include "dagode/errors.hpp"
#include "dagode/learners.hpp"

namespace dagode {

std::string to_string(GradientMode m) { return m == GradientMode::Direct ? "direct" : "adjoint"; }

GradientMode parse_gradient_mode(const std::string& s) {
  if (s == "direct") return GradientMode::Direct;
  if (s == "adjoint") return GradientMode::Adjoint;
  throw ContractViolation("unknown gradient mode: " + s);
}

std::string to_string(InnerSolver s) { return s == InnerSolver::Adam ? "adam" : "lbfgs"; }

InnerSolver parse_inner_solver(const std::string& s) {
  if (s == "adam") return InnerSolver::Adam;
  if (s == "lbfgs") return InnerSolver::Lbfgs;
  throw ContractViolation("unknown inner solver: " + s);
}

LearnerConfig LearnerConfig::notears_defaults() {
  LearnerConfig cfg;
  cfg.lambda1 = 0.1;
  cfg.threshold = 0.3;
  cfg.solver = InnerSolver::Lbfgs;
  cfg.inner_steps = 1000;
  return cfg;
}

LearnerConfig LearnerConfig::dag_ode_defaults() {
  LearnerConfig cfg;
  cfg.lambda1 = 0.01;
  return cfg;
}

void LearnerConfig::validate() const {
  if (!(lambda1 >= 0.0)) throw ContractViolation("LearnerConfig: lambda1 must be nonnegative");
  if (!(rho0 > 0.0)) throw ContractViolation("LearnerConfig: rho0 must be positive");
  if (!(rho_mult > 1.0)) throw ContractViolation("LearnerConfig: rho_mult must exceed 1");
  if (!(rho_max >= rho0)) throw ContractViolation("LearnerConfig: rho_max must be at least rho0");
  if (!(h_tol > 0.0)) throw ContractViolation("LearnerConfig: h_tol must be positive");
  if (max_outer < 1) throw ContractViolation("LearnerConfig: max_outer must be at least 1");
  if (inner_steps < 1) throw ContractViolation("LearnerConfig: inner_steps must be at least 1");
  if (!(lr > 0.0)) throw ContractViolation("LearnerConfig: lr must be positive");
  if (threshold && !(*threshold >= 0.0)) throw ContractViolation("LearnerConfig: threshold must be nonnegative");
  if (!(init_scale >= 0.0)) throw ContractViolation("LearnerConfig: init_scale must be nonnegative");
  if (ode_steps < 1) throw ContractViolation("LearnerConfig: ode_steps must be at least 1");
  if (!(t1 > 0.0)) throw ContractViolation("LearnerConfig: t1 must be positive");
  if (batch_size < 1 || chunk_size < 1) throw ContractViolation("LearnerConfig: batch and chunk sizes must be positive");
  if (threads < 1) throw ContractViolation("LearnerConfig: threads must be at least 1");
}

}  // namespace dagode
