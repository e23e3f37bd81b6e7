#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dagode/matrix.hpp"

namespace dagode {

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Hadamard,
  Scale,
  AddScalar,
  Matmul,
  Transpose,
  AddRow,
  MulRow,
  Tanh,
  TanhPrime,
  Elu,
  EluPrime,
  Abs,
  Square,
  Exp,
  Log,
  Sum,
  RowSums,
  ColMeans,
  Trace,
  Column,
  HConcat,
  Slice,
  MaskDiagonal,
  TraceExpSquare,
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  NodeId id() const noexcept { return id_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Reverse-mode differentiation record over matrix-valued primitives.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted. A tape is single-owner and not thread-safe; run
/// independent tapes on separate threads instead.
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    NodeId a = 0;
    NodeId b = 0;
    std::vector<NodeId> extra;  // HConcat inputs
    double scalar = 0.0;
    std::size_t p0 = 0, p1 = 0, p2 = 0;
    bool needs_grad = false;
    Matrix value;
    Matrix aux;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameters, states).
  Var variable(Matrix value);
  /// Input that never receives a gradient (data, fixed coefficients).
  Var constant(Matrix value);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Matrix& value(NodeId id) const { return nodes_.at(id).value; }

  /// Exact reverse-mode derivatives of the scalar `output` with respect to
  /// each node in `wrt`. Throws ContractViolation for a non-scalar output and
  /// NumericError (carrying the node index) when a NaN or infinity shows up
  /// in a value or an adjoint.
  std::vector<Matrix> grad(Var output, std::span<const Var> wrt) const;

  Var push(Node node);

 private:
  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var operator*(Var a, Var b);
Var operator*(Var a, double s);
Var operator*(double s, Var a);
Var operator+(Var a, double s);
Var operator-(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
/// a (n×m) + r (1×m) broadcast over rows.
Var add_row(Var a, Var r);
/// a (n×m) ∘ r (1×m) broadcast over rows.
Var mul_row(Var a, Var r);
Var tanh(Var a);
/// 1 − tanh²(a), differentiable.
Var tanh_prime(Var a);
Var elu(Var a);
Var elu_prime(Var a);
Var abs(Var a);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
/// Sum of all entries, 1×1.
Var sum(Var a);
/// n×m → n×1.
Var row_sums(Var a);
/// n×m → 1×m.
Var col_means(Var a);
Var trace(Var a);
/// Column c as n×1.
Var column(Var a, std::size_t c);
/// Concatenate same-height matrices left to right.
Var hconcat(std::span<const Var> parts);
/// Reinterpret entries [offset, offset + rows·cols) of `a` as a rows×cols matrix.
Var slice(Var a, std::size_t offset, std::size_t rows, std::size_t cols);
Var mask_diagonal(Var a);
/// Tr(exp(W∘W)) as a fused primitive with gradient exp(W∘W)ᵀ∘2W.
Var trace_exp_square(Var w);

}  // namespace dagode
