#pragma once

#include "dagode/matrix.hpp"
#include "dagode/tape.hpp"

namespace dagode {

/// Constraint value h and its gradient with respect to the input matrix.
struct ConstraintValue {
  double h = 0.0;
  Matrix grad;
};

enum class ConstraintForm { Exp, Poly };

/// h(W) = Tr(exp(W∘W)) − d, gradient exp(W∘W)ᵀ∘2W. Tiny negative round-off
/// is floored to 0.
ConstraintValue h_exp(const Matrix& w);

/// h(W) = Tr[(I + αW∘W)^d] − d. Gradient comes from the tape. Throws
/// ContractViolation unless α > 0.
ConstraintValue h_poly(const Matrix& w, double alpha);

/// h_exp applied to an averaged absolute Jacobian after zeroing its diagonal:
/// self-dependence of a continuous-time drift is not a causal cycle.
ConstraintValue h_jacobian(const Matrix& jbar);

/// Tape versions, for use inside larger objectives. Neither masks the
/// diagonal nor floors the value.
Var h_exp(Var w);
Var h_poly(Var w, double alpha);
Var h_constraint(Var w, ConstraintForm form);

}  // namespace dagode
