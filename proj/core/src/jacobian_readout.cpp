#include <array>
#include <cmath>

#include "dagode/errors.hpp"
#include "dagode/learners.hpp"

namespace dagode {

Matrix jacobian_readout(const Drift& model, const Matrix& x) {
  const std::size_t d = model.dim();
  if (x.cols() != d) throw ContractViolation("jacobian_readout: data width differs from model input width");
  if (x.rows() == 0) throw ContractViolation("jacobian_readout: no rows");
  const std::vector<double> theta = model.params();
  Matrix jbar(d, d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Tape tape;
    Var th = tape.constant(Matrix::row_vector(theta));
    Var state = tape.variable(Matrix::row_vector(x.row(i)));
    Var out = model.bind(th)(state, 0.0);
    const std::array<Var, 1> wrt{state};
    for (std::size_t j = 0; j < d; ++j) {
      const Matrix g = tape.grad(sum(column(out, j)), wrt).front();
      for (std::size_t k = 0; k < d; ++k) jbar(j, k) += std::abs(g[k]);
    }
  }
  jbar *= 1.0 / static_cast<double>(x.rows());
  return jbar;
}

Matrix jacobian_readout(const Drift& model, const Dataset& data) { return jacobian_readout(model, data.x); }

}  // namespace dagode
