#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace proxflow::ad {

using Matrix = Eigen::MatrixXd;
using NodeId = std::uint32_t;

/// Operation tag of a recorded node. Payloads are dense matrices; scalars are 1x1.
enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,        // elementwise
  Neg,
  Scale,      // c * a, c a recorded literal
  Shift,      // a + c, c a recorded literal
  Exp,
  Log,
  Reciprocal,
  Square,     // power 2
  Softplus,
  Sigmoid,
  Tanh,
  Relu,       // max(a, 0), subgradient 0 at the kink
  Step,       // 1[a > 0]; locally constant, carries no gradient
  MatMul,     // covers dot and matvec
  Transpose,
  Sum,            // all entries -> 1x1
  Broadcast,      // 1x1 -> rows x cols
  SumRows,        // m x n -> 1 x n
  BroadcastRows,  // 1 x n -> m x n
  SumCols,        // m x n -> m x 1
  BroadcastCols,  // m x 1 -> m x n
  SliceCols,
  PadCols,
  ConcatCols,
};

const char* op_name(Op op);

/// Raised when a node evaluates to a NaN or infinity.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(Op op, NodeId id);
  Op op() const { return op_; }
  NodeId node() const { return node_; }

 private:
  Op op_;
  NodeId node_;
};

struct Node {
  Op op = Op::Constant;
  std::uint8_t arity = 0;
  NodeId parents[2] = {0, 0};
  double literal = 0.0;
  long args[2] = {0, 0};
  Matrix value;
};

class Tape;

/// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  NodeId id() const { return id_; }
  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Append-only computation graph. Backward passes record onto the same tape,
/// so any returned gradient can itself be differentiated.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const std::string& label, Matrix value);
  Var leaf(const std::string& label, double value);
  Var constant(Matrix value);
  Var constant(double value);

  /// Looks up a labeled leaf. Throws std::out_of_range when absent.
  Var find_leaf(const std::string& label);

  /// d output / d wrt for every requested node. `output` must be 1x1.
  /// Nodes that `output` does not depend on get a zero constant of matching shape.
  std::vector<Var> gradient(Var output, std::span<const Var> wrt);
  Var gradient(Var output, Var wrt);

  /// Re-evaluates every non-leaf node from its parents and returns true when
  /// all values are reproduced bitwise.
  bool replay();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }
  const Matrix& value(NodeId id) const { return nodes_[id].value; }

  // Op constructors. Shapes are checked; mismatches throw std::invalid_argument.
  Var unary(Op op, Var a, double literal = 0.0);
  Var binary(Op op, Var a, Var b);
  Var reshape_op(Op op, Var a, long arg0, long arg1);

 private:
  Var push(Node node);
  Matrix evaluate(const Node& node) const;
  void check_shapes(const Node& node) const;
  Var vjp(NodeId id, int which, Var adjoint);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> leaf_index_;
};

// Free-function operators.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(double c, Var a);
Var operator*(Var a, double c);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var reciprocal(Var a);
Var square(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var step(Var a);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var sum(Var a);
Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols);
Var sum_rows(Var a);
Var broadcast_rows(Var row, Eigen::Index rows);
Var sum_cols(Var a);
Var broadcast_cols(Var col, Eigen::Index cols);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var pad_cols(Var a, Eigen::Index start, Eigen::Index total);
Var concat_cols(Var a, Var b);

/// sum(a) / (rows * cols)
Var mean(Var a);
/// a + broadcast_rows(row)
Var add_row(Var a, Var row);
/// Row-wise squared Euclidean norm, m x n -> m x 1.
Var row_sq_norm(Var a);

using LeafValues = std::vector<std::pair<std::string, Matrix>>;
using ExprBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Records each labeled leaf, then runs `build` on them. Leaves must be finite.
Var record(Tape& tape, const LeafValues& leaves, const ExprBuilder& build);

/// Differentiates `output` w.r.t. `inner_wrt`, maps those gradients to a scalar
/// with `outer`, and differentiates that scalar w.r.t. `outer_wrt`.
std::vector<Var> gradient_of_gradient(
    Var output, std::span<const Var> inner_wrt,
    const std::function<Var(const std::vector<Var>&)>& outer,
    std::span<const Var> outer_wrt);

}  // namespace proxflow::ad
