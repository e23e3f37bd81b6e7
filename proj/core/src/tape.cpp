#include "dagode/tape.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "dagode/errors.hpp"

namespace dagode {

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw ContractViolation("tape: operands live on different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw ContractViolation("tape: null variable");
  return *a.tape();
}

bool needs(const Tape& t, NodeId id) { return t.node(id).needs_grad; }

Tape::Node unary(Op op, const Tape& t, Var a, Matrix value) {
  Tape::Node n;
  n.op = op;
  n.a = a.id();
  n.needs_grad = needs(t, a.id());
  n.value = std::move(value);
  return n;
}

Tape::Node binary(Op op, const Tape& t, Var a, Var b, Matrix value) {
  Tape::Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  n.needs_grad = needs(t, a.id()) || needs(t, b.id());
  n.value = std::move(value);
  return n;
}

template <class F>
Matrix map(const Matrix& m, F f) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m[i]);
  return out;
}

Matrix col_sums(const Matrix& g) {
  Matrix out(1, g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out[c] += g(r, c);
  return out;
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw ContractViolation("Var: null variable");
  return tape_->value(id_);
}

Var Tape::variable(Matrix value) {
  Node n;
  n.needs_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<Matrix> Tape::grad(Var output, std::span<const Var> wrt) const {
  if (output.tape() != this) throw ContractViolation("grad: output belongs to another tape");
  const NodeId out = output.id();
  if (nodes_.at(out).value.size() != 1) throw ContractViolation("grad: output is not a scalar");

  std::vector<std::optional<Matrix>> adj(out + 1);
  adj[out] = Matrix(1, 1, 1.0);

  auto accumulate = [&](NodeId id, Matrix contribution) {
    if (!nodes_[id].needs_grad) return;
    if (adj[id]) {
      *adj[id] += contribution;
    } else {
      adj[id] = std::move(contribution);
    }
  };

  for (NodeId i = out + 1; i-- > 0;) {
    if (!adj[i]) continue;
    const Node& n = nodes_[i];
    const Matrix& g = *adj[i];
    if (!n.value.all_finite()) {
      // report where the non-finite value first appeared
      NodeId first = 0;
      while (nodes_[first].value.all_finite()) ++first;
      throw NumericError("grad: non-finite value", first);
    }
    if (!g.all_finite()) throw NumericError("grad: non-finite adjoint", i);
    if (n.op == Op::Leaf) continue;
    const Matrix& va = nodes_[n.a].value;
    const bool ga = nodes_[n.a].needs_grad;

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Sub:
        accumulate(n.a, g);
        if (nodes_[n.b].needs_grad) accumulate(n.b, g * -1.0);
        break;
      case Op::Hadamard:
        if (ga) accumulate(n.a, hadamard(g, nodes_[n.b].value));
        if (nodes_[n.b].needs_grad) accumulate(n.b, hadamard(g, va));
        break;
      case Op::Scale:
        accumulate(n.a, g * n.scalar);
        break;
      case Op::AddScalar:
        accumulate(n.a, g);
        break;
      case Op::Matmul:
        if (ga) accumulate(n.a, matmul_nt(g, nodes_[n.b].value));
        if (nodes_[n.b].needs_grad) accumulate(n.b, matmul_tn(va, g));
        break;
      case Op::Transpose:
        accumulate(n.a, transpose(g));
        break;
      case Op::AddRow:
        accumulate(n.a, g);
        if (nodes_[n.b].needs_grad) accumulate(n.b, col_sums(g));
        break;
      case Op::MulRow: {
        const Matrix& r = nodes_[n.b].value;
        if (ga) {
          Matrix c(g.rows(), g.cols());
          for (std::size_t row = 0; row < g.rows(); ++row)
            for (std::size_t col = 0; col < g.cols(); ++col) c(row, col) = g(row, col) * r[col];
          accumulate(n.a, std::move(c));
        }
        if (nodes_[n.b].needs_grad) accumulate(n.b, col_sums(hadamard(g, va)));
        break;
      }
      case Op::Tanh: {
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = g[k] * (1.0 - n.value[k] * n.value[k]);
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::TanhPrime: {
        // d/dx (1 - tanh²x) = -2 tanh x (1 - tanh²x)
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = g[k] * (-2.0 * std::tanh(va[k]) * n.value[k]);
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::Elu: {
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = g[k] * (va[k] > 0.0 ? 1.0 : n.value[k] + 1.0);
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::EluPrime: {
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = va[k] > 0.0 ? 0.0 : g[k] * n.value[k];
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::Abs: {
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = va[k] > 0.0 ? g[k] : (va[k] < 0.0 ? -g[k] : 0.0);
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::Square: {
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = 2.0 * va[k] * g[k];
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::Exp:
        accumulate(n.a, hadamard(g, n.value));
        break;
      case Op::Log: {
        Matrix c(g.rows(), g.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[k] = g[k] / va[k];
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::Sum:
        accumulate(n.a, Matrix(va.rows(), va.cols(), g[0]));
        break;
      case Op::RowSums: {
        Matrix c(va.rows(), va.cols());
        for (std::size_t r = 0; r < va.rows(); ++r)
          for (std::size_t col = 0; col < va.cols(); ++col) c(r, col) = g[r];
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::ColMeans: {
        Matrix c(va.rows(), va.cols());
        const double inv = 1.0 / static_cast<double>(va.rows());
        for (std::size_t r = 0; r < va.rows(); ++r)
          for (std::size_t col = 0; col < va.cols(); ++col) c(r, col) = g[col] * inv;
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::Trace:
        accumulate(n.a, Matrix::identity(va.rows()) * g[0]);
        break;
      case Op::Column: {
        Matrix c(va.rows(), va.cols());
        for (std::size_t r = 0; r < va.rows(); ++r) c(r, n.p0) = g[r];
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::HConcat: {
        std::size_t offset = 0;
        for (NodeId part : n.extra) {
          const Matrix& pv = nodes_[part].value;
          if (nodes_[part].needs_grad) {
            Matrix c(pv.rows(), pv.cols());
            for (std::size_t r = 0; r < pv.rows(); ++r)
              for (std::size_t col = 0; col < pv.cols(); ++col) c(r, col) = g(r, offset + col);
            accumulate(part, std::move(c));
          }
          offset += pv.cols();
        }
        break;
      }
      case Op::Slice: {
        Matrix c(va.rows(), va.cols());
        for (std::size_t k = 0; k < g.size(); ++k) c[n.p0 + k] = g[k];
        accumulate(n.a, std::move(c));
        break;
      }
      case Op::MaskDiagonal:
        accumulate(n.a, zero_diagonal(g));
        break;
      case Op::TraceExpSquare: {
        Matrix c = transpose(n.aux);
        for (std::size_t k = 0; k < c.size(); ++k) c[k] *= 2.0 * va[k] * g[0];
        accumulate(n.a, std::move(c));
        break;
      }
    }
  }

  std::vector<Matrix> result;
  result.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.tape() != this) throw ContractViolation("grad: wrt node belongs to another tape");
    if (v.id() <= out && adj[v.id()]) {
      result.push_back(*adj[v.id()]);
    } else {
      const Matrix& val = nodes_[v.id()].value;
      result.emplace_back(val.rows(), val.cols());
    }
  }
  return result;
}

Var operator+(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(binary(Op::Add, t, a, b, a.value() + b.value()));
}

Var operator-(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(binary(Op::Sub, t, a, b, a.value() - b.value()));
}

Var operator*(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(binary(Op::Hadamard, t, a, b, hadamard(a.value(), b.value())));
}

Var operator*(Var a, double s) {
  Tape& t = tape_of(a);
  auto n = unary(Op::Scale, t, a, a.value() * s);
  n.scalar = s;
  return t.push(std::move(n));
}

Var operator*(double s, Var a) { return a * s; }
Var operator-(Var a) { return a * -1.0; }

Var operator+(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix v = a.value();
  for (double& x : v.data()) x += s;
  auto n = unary(Op::AddScalar, t, a, std::move(v));
  n.scalar = s;
  return t.push(std::move(n));
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(binary(Op::Matmul, t, a, b, matmul(a.value(), b.value())));
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Transpose, t, a, transpose(a.value())));
}

Var add_row(Var a, Var r) {
  Tape& t = tape_of(a, r);
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw ContractViolation("add_row: row vector width mismatch");
  Matrix v = av;
  for (std::size_t row = 0; row < v.rows(); ++row)
    for (std::size_t c = 0; c < v.cols(); ++c) v(row, c) += rv[c];
  return t.push(binary(Op::AddRow, t, a, r, std::move(v)));
}

Var mul_row(Var a, Var r) {
  Tape& t = tape_of(a, r);
  const Matrix& av = a.value();
  const Matrix& rv = r.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw ContractViolation("mul_row: row vector width mismatch");
  Matrix v = av;
  for (std::size_t row = 0; row < v.rows(); ++row)
    for (std::size_t c = 0; c < v.cols(); ++c) v(row, c) *= rv[c];
  return t.push(binary(Op::MulRow, t, a, r, std::move(v)));
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Tanh, t, a, map(a.value(), [](double x) { return std::tanh(x); })));
}

Var tanh_prime(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::TanhPrime, t, a, map(a.value(), [](double x) {
                        const double th = std::tanh(x);
                        return 1.0 - th * th;
                      })));
}

Var elu(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Elu, t, a, map(a.value(), [](double x) { return x > 0.0 ? x : std::expm1(x); })));
}

Var elu_prime(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::EluPrime, t, a, map(a.value(), [](double x) { return x > 0.0 ? 1.0 : std::exp(x); })));
}

Var abs(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Abs, t, a, abs(a.value())));
}

Var square(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Square, t, a, map(a.value(), [](double x) { return x * x; })));
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Exp, t, a, map(a.value(), [](double x) { return std::exp(x); })));
}

Var log(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Log, t, a, map(a.value(), [](double x) { return std::log(x); })));
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Sum, t, a, Matrix::scalar(sum(a.value()))));
}

Var row_sums(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix v(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double x : av.row(r)) s += x;
    v[r] = s;
  }
  return t.push(unary(Op::RowSums, t, a, std::move(v)));
}

Var col_means(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ContractViolation("col_means: no rows");
  Matrix v = col_sums(av);
  v *= 1.0 / static_cast<double>(av.rows());
  return t.push(unary(Op::ColMeans, t, a, std::move(v)));
}

Var trace(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::Trace, t, a, Matrix::scalar(trace(a.value()))));
}

Var column(Var a, std::size_t c) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (c >= av.cols()) throw ContractViolation("column: index out of range");
  auto n = unary(Op::Column, t, a, Matrix::col_vector(av.col(c)));
  n.p0 = c;
  return t.push(std::move(n));
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("hconcat: no parts");
  Tape& t = tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractViolation("hconcat: operands live on different tapes");
    if (p.rows() != rows) throw ContractViolation("hconcat: row counts differ");
    cols += p.cols();
  }
  Tape::Node n;
  n.op = Op::HConcat;
  n.value = Matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) n.value(r, offset + c) = pv(r, c);
    offset += pv.cols();
    n.extra.push_back(p.id());
    n.needs_grad = n.needs_grad || t.node(p.id()).needs_grad;
  }
  n.a = parts.front().id();
  return t.push(std::move(n));
}

Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (offset + rows * cols > av.size()) throw ContractViolation("slice: range exceeds source size");
  std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(offset),
                           av.data().begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
  auto n = unary(Op::Slice, t, a, Matrix(rows, cols, std::move(data)));
  n.p0 = offset;
  return t.push(std::move(n));
}

Var mask_diagonal(Var a) {
  Tape& t = tape_of(a);
  return t.push(unary(Op::MaskDiagonal, t, a, zero_diagonal(a.value())));
}

Var trace_exp_square(Var w) {
  Tape& t = tape_of(w);
  const Matrix& wv = w.value();
  if (!wv.square()) throw ContractViolation("trace_exp_square: matrix is not square");
  Matrix e = matrix_exp(hadamard(wv, wv));
  auto n = unary(Op::TraceExpSquare, t, w, Matrix::scalar(trace(e)));
  n.aux = std::move(e);
  return t.push(std::move(n));
}

}  // namespace dagode
