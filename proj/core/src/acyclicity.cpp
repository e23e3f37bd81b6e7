#include "dagode/acyclicity.hpp"

#include <array>

#include "dagode/errors.hpp"

namespace dagode {

ConstraintValue h_exp(const Matrix& w) {
  if (!w.square()) throw ContractViolation("h_exp: matrix is not square");
  if (!w.all_finite()) throw NumericError("h_exp: non-finite input", 0);
  const Matrix e = matrix_exp(hadamard(w, w));
  ConstraintValue out;
  out.h = std::max(0.0, trace(e) - static_cast<double>(w.rows()));
  out.grad = transpose(e);
  for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] *= 2.0 * w[k];
  return out;
}

ConstraintValue h_poly(const Matrix& w, double alpha) {
  if (!w.square()) throw ContractViolation("h_poly: matrix is not square");
  Tape tape;
  Var wv = tape.variable(w);
  Var h = h_poly(wv, alpha);
  const std::array<Var, 1> wrt{wv};
  ConstraintValue out;
  out.grad = tape.grad(h, wrt).front();
  out.h = std::max(0.0, h.value().item());
  return out;
}

ConstraintValue h_jacobian(const Matrix& jbar) { return h_exp(zero_diagonal(jbar)); }

Var h_exp(Var w) { return trace_exp_square(w) + -static_cast<double>(w.rows()); }

Var h_poly(Var w, double alpha) {
  if (!(alpha > 0.0)) throw ContractViolation("h_poly: alpha must be positive");
  const std::size_t d = w.rows();
  if (d != w.cols()) throw ContractViolation("h_poly: matrix is not square");
  Tape& tape = *w.tape();
  Var base = tape.constant(Matrix::identity(d)) + alpha * (w * w);
  Var power = base;
  for (std::size_t k = 1; k < d; ++k) power = matmul(power, base);
  return trace(power) + -static_cast<double>(d);
}

Var h_constraint(Var w, ConstraintForm form) {
  return form == ConstraintForm::Exp ? h_exp(w) : h_poly(w, 1.0 / static_cast<double>(w.rows()));
}

}  // namespace dagode
