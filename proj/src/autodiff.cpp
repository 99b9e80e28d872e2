#include "proxflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace proxflow::ad {

namespace {

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string non_finite_message(Op op, NodeId id) {
  std::ostringstream os;
  os << "non-finite value produced by op '" << op_name(op) << "' at node " << id;
  return os.str();
}

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    return false;
  }
  return (a.array() == b.array()).all();
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Reciprocal: return "reciprocal";
    case Op::Square: return "power";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "max";
    case Op::Step: return "step";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Sum: return "sum";
    case Op::Broadcast: return "broadcast";
    case Op::SumRows: return "sum_rows";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::SumCols: return "sum_cols";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::PadCols: return "pad_cols";
    case Op::ConcatCols: return "concat_cols";
  }
  return "unknown";
}

NonFiniteError::NonFiniteError(Op op, NodeId id)
    : std::runtime_error(non_finite_message(op, id)), op_(op), node_(id) {}

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw std::invalid_argument("scalar() on a " + shape_of(v) + " node");
  }
  return v(0, 0);
}

Var Tape::push(Node node) {
  if (!node.value.allFinite()) {
    throw NonFiniteError(node.op, static_cast<NodeId>(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::leaf(const std::string& label, Matrix value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  Var v = push(std::move(n));
  leaf_index_[label] = v.id();
  return v;
}

Var Tape::leaf(const std::string& label, double value) {
  return leaf(label, Matrix::Constant(1, 1, value));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::find_leaf(const std::string& label) {
  auto it = leaf_index_.find(label);
  if (it == leaf_index_.end()) {
    throw std::out_of_range("no leaf labeled '" + label + "'");
  }
  return Var(this, it->second);
}

void Tape::check_shapes(const Node& n) const {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument(std::string("op '") + op_name(n.op) + "': " + why);
  };
  const Matrix& a = nodes_[n.parents[0]].value;
  switch (n.op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const Matrix& b = nodes_[n.parents[1]].value;
      if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail("shape mismatch " + shape_of(a) + " vs " + shape_of(b));
      }
      break;
    }
    case Op::MatMul: {
      const Matrix& b = nodes_[n.parents[1]].value;
      if (a.cols() != b.rows()) {
        fail("inner dimension mismatch " + shape_of(a) + " * " + shape_of(b));
      }
      break;
    }
    case Op::ConcatCols: {
      const Matrix& b = nodes_[n.parents[1]].value;
      if (a.rows() != b.rows()) {
        fail("row mismatch " + shape_of(a) + " | " + shape_of(b));
      }
      break;
    }
    case Op::Broadcast:
      if (a.size() != 1) fail("expects a 1x1 input, got " + shape_of(a));
      break;
    case Op::BroadcastRows:
      if (a.rows() != 1) fail("expects a row vector, got " + shape_of(a));
      break;
    case Op::BroadcastCols:
      if (a.cols() != 1) fail("expects a column vector, got " + shape_of(a));
      break;
    case Op::SliceCols:
      if (n.args[0] < 0 || n.args[1] < 0 || n.args[0] + n.args[1] > a.cols()) {
        fail("column range out of bounds for " + shape_of(a));
      }
      break;
    case Op::PadCols:
      if (n.args[0] < 0 || n.args[0] + a.cols() > n.args[1]) {
        fail("padding target too narrow for " + shape_of(a));
      }
      break;
    default:
      break;
  }
}

Matrix Tape::evaluate(const Node& n) const {
  const Matrix& a = nodes_[n.parents[0]].value;
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return n.value;
    case Op::Add: return a + nodes_[n.parents[1]].value;
    case Op::Sub: return a - nodes_[n.parents[1]].value;
    case Op::Mul: return a.cwiseProduct(nodes_[n.parents[1]].value);
    case Op::Neg: return -a;
    case Op::Scale: return n.literal * a;
    case Op::Shift: return (a.array() + n.literal).matrix();
    case Op::Exp: return a.array().exp().matrix();
    case Op::Log: return a.array().log().matrix();
    case Op::Reciprocal: return a.array().inverse().matrix();
    case Op::Square: return a.array().square().matrix();
    case Op::Softplus: return a.unaryExpr(&softplus_scalar);
    case Op::Sigmoid: return a.unaryExpr(&sigmoid_scalar);
    case Op::Tanh: return a.array().tanh().matrix();
    case Op::Relu: return a.cwiseMax(0.0);
    case Op::Step: return (a.array() > 0.0).cast<double>().matrix();
    case Op::MatMul: return a * nodes_[n.parents[1]].value;
    case Op::Transpose: return a.transpose();
    case Op::Sum: return Matrix::Constant(1, 1, a.sum());
    case Op::Broadcast: return Matrix::Constant(n.args[0], n.args[1], a(0, 0));
    case Op::SumRows: return a.colwise().sum();
    case Op::BroadcastRows: return a.replicate(n.args[0], 1);
    case Op::SumCols: return a.rowwise().sum();
    case Op::BroadcastCols: return a.replicate(1, n.args[0]);
    case Op::SliceCols: return a.middleCols(n.args[0], n.args[1]);
    case Op::PadCols: {
      Matrix out = Matrix::Zero(a.rows(), n.args[1]);
      out.middleCols(n.args[0], a.cols()) = a;
      return out;
    }
    case Op::ConcatCols: {
      const Matrix& b = nodes_[n.parents[1]].value;
      Matrix out(a.rows(), a.cols() + b.cols());
      out << a, b;
      return out;
    }
  }
  throw std::logic_error("unhandled op");
}

Var Tape::unary(Op op, Var a, double literal) {
  Node n;
  n.op = op;
  n.arity = 1;
  n.parents[0] = a.id();
  n.literal = literal;
  check_shapes(n);
  n.value = evaluate(n);
  return push(std::move(n));
}

Var Tape::binary(Op op, Var a, Var b) {
  if (a.tape() != this || b.tape() != this) {
    throw std::invalid_argument("operands live on different tapes");
  }
  Node n;
  n.op = op;
  n.arity = 2;
  n.parents[0] = a.id();
  n.parents[1] = b.id();
  check_shapes(n);
  n.value = evaluate(n);
  return push(std::move(n));
}

Var Tape::reshape_op(Op op, Var a, long arg0, long arg1) {
  Node n;
  n.op = op;
  n.arity = 1;
  n.parents[0] = a.id();
  n.args[0] = arg0;
  n.args[1] = arg1;
  check_shapes(n);
  n.value = evaluate(n);
  return push(std::move(n));
}

Var Tape::vjp(NodeId id, int which, Var g) {
  // Copy what we need: pushing new nodes may reallocate nodes_.
  const Op op = nodes_[id].op;
  const Var self(this, id);
  const Var a(this, nodes_[id].parents[0]);
  const Var b(this, nodes_[id].parents[1]);
  const double literal = nodes_[id].literal;
  const long arg0 = nodes_[id].args[0];
  switch (op) {
    case Op::Add: return g;
    case Op::Sub: return which == 0 ? g : -g;
    case Op::Mul: return which == 0 ? g * b : g * a;
    case Op::Neg: return -g;
    case Op::Scale: return literal * g;
    case Op::Shift: return g;
    case Op::Exp: return g * self;
    case Op::Log: return g * reciprocal(a);
    case Op::Reciprocal: return -(g * square(self));
    case Op::Square: return 2.0 * (g * a);
    case Op::Softplus: return g * sigmoid(a);
    case Op::Sigmoid: return g * (self - square(self));
    case Op::Tanh: return g - g * square(self);
    case Op::Relu: return g * step(a);
    case Op::MatMul: return which == 0 ? matmul(g, transpose(b)) : matmul(transpose(a), g);
    case Op::Transpose: return transpose(g);
    case Op::Sum: return broadcast(g, a.rows(), a.cols());
    case Op::Broadcast: return sum(g);
    case Op::SumRows: return broadcast_rows(g, a.rows());
    case Op::BroadcastRows: return sum_rows(g);
    case Op::SumCols: return broadcast_cols(g, a.cols());
    case Op::BroadcastCols: return sum_cols(g);
    case Op::SliceCols: return pad_cols(g, arg0, a.cols());
    case Op::PadCols: return slice_cols(g, arg0, a.cols());
    case Op::ConcatCols:
      return which == 0 ? slice_cols(g, 0, a.cols()) : slice_cols(g, a.cols(), b.cols());
    case Op::Leaf:
    case Op::Constant:
    case Op::Step:
      break;
  }
  throw std::logic_error(std::string("no adjoint rule for op '") + op_name(op) + "'");
}

std::vector<Var> Tape::gradient(Var output, std::span<const Var> wrt) {
  if (output.tape() != this) {
    throw std::invalid_argument("gradient: output lives on another tape");
  }
  if (output.value().size() != 1) {
    throw std::invalid_argument("gradient: output must be scalar, got " +
                                shape_of(output.value()));
  }
  std::vector<Var> result;
  result.reserve(wrt.size());
  if (wrt.empty()) {
    return result;
  }

  const NodeId top = output.id();
  NodeId lo = top;
  for (const Var& w : wrt) {
    lo = std::min(lo, w.id());
  }

  // needs[i - lo]: node i depends on some requested node.
  std::vector<char> needs(top - lo + 1, 0);
  for (const Var& w : wrt) {
    if (w.id() <= top) needs[w.id() - lo] = 1;
  }
  for (NodeId i = lo; i <= top; ++i) {
    if (needs[i - lo]) continue;
    const Node& n = nodes_[i];
    for (int p = 0; p < n.arity; ++p) {
      const NodeId pid = n.parents[p];
      if (pid >= lo && needs[pid - lo]) {
        needs[i - lo] = 1;
        break;
      }
    }
  }

  std::vector<Var> adjoint(top - lo + 1);
  if (needs[top - lo]) {
    adjoint[top - lo] = constant(1.0);
  }
  for (NodeId i = top + 1; i-- > lo;) {
    Var g = adjoint[i - lo];
    if (!g.valid()) continue;
    const Op op = nodes_[i].op;
    if (op == Op::Leaf || op == Op::Constant || op == Op::Step) continue;
    const int arity = nodes_[i].arity;
    for (int p = 0; p < arity; ++p) {
      const NodeId pid = nodes_[i].parents[p];
      if (pid < lo || !needs[pid - lo]) continue;
      Var contribution = vjp(i, p, g);
      Var& slot = adjoint[pid - lo];
      slot = slot.valid() ? slot + contribution : contribution;
    }
  }

  for (const Var& w : wrt) {
    Var g = w.id() <= top ? adjoint[w.id() - lo] : Var();
    if (!g.valid()) {
      g = constant(Matrix::Zero(w.rows(), w.cols()));
    }
    result.push_back(g);
  }
  return result;
}

Var Tape::gradient(Var output, Var wrt) {
  return gradient(output, std::span<const Var>(&wrt, 1)).front();
}

bool Tape::replay() {
  bool identical = true;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::Leaf || n.op == Op::Constant) continue;
    Matrix fresh = evaluate(n);
    if (!bitwise_equal(fresh, n.value)) {
      identical = false;
      n.value = std::move(fresh);
    }
  }
  return identical;
}

Var operator+(Var a, Var b) { return a.tape()->binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return a.tape()->binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return a.tape()->binary(Op::Mul, a, b); }
Var operator-(Var a) { return a.tape()->unary(Op::Neg, a); }
Var operator*(double c, Var a) { return a.tape()->unary(Op::Scale, a, c); }
Var operator*(Var a, double c) { return a.tape()->unary(Op::Scale, a, c); }
Var operator+(Var a, double c) { return a.tape()->unary(Op::Shift, a, c); }
Var operator+(double c, Var a) { return a.tape()->unary(Op::Shift, a, c); }
Var operator-(Var a, double c) { return a.tape()->unary(Op::Shift, a, -c); }
Var operator-(double c, Var a) { return c + (-a); }

Var exp(Var a) { return a.tape()->unary(Op::Exp, a); }
Var log(Var a) { return a.tape()->unary(Op::Log, a); }
Var reciprocal(Var a) { return a.tape()->unary(Op::Reciprocal, a); }
Var square(Var a) { return a.tape()->unary(Op::Square, a); }
Var softplus(Var a) { return a.tape()->unary(Op::Softplus, a); }
Var sigmoid(Var a) { return a.tape()->unary(Op::Sigmoid, a); }
Var tanh(Var a) { return a.tape()->unary(Op::Tanh, a); }
Var relu(Var a) { return a.tape()->unary(Op::Relu, a); }
Var step(Var a) { return a.tape()->unary(Op::Step, a); }
Var matmul(Var a, Var b) { return a.tape()->binary(Op::MatMul, a, b); }
Var transpose(Var a) { return a.tape()->unary(Op::Transpose, a); }
Var sum(Var a) { return a.tape()->unary(Op::Sum, a); }

Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols) {
  return scalar.tape()->reshape_op(Op::Broadcast, scalar, rows, cols);
}
Var sum_rows(Var a) { return a.tape()->unary(Op::SumRows, a); }
Var broadcast_rows(Var row, Eigen::Index rows) {
  return row.tape()->reshape_op(Op::BroadcastRows, row, rows, 0);
}
Var sum_cols(Var a) { return a.tape()->unary(Op::SumCols, a); }
Var broadcast_cols(Var col, Eigen::Index cols) {
  return col.tape()->reshape_op(Op::BroadcastCols, col, cols, 0);
}
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  return a.tape()->reshape_op(Op::SliceCols, a, start, count);
}
Var pad_cols(Var a, Eigen::Index start, Eigen::Index total) {
  return a.tape()->reshape_op(Op::PadCols, a, start, total);
}
Var concat_cols(Var a, Var b) { return a.tape()->binary(Op::ConcatCols, a, b); }

Var mean(Var a) { return (1.0 / static_cast<double>(a.value().size())) * sum(a); }

Var add_row(Var a, Var row) { return a + broadcast_rows(row, a.rows()); }

Var row_sq_norm(Var a) { return sum_cols(square(a)); }

Var record(Tape& tape, const LeafValues& leaves, const ExprBuilder& build) {
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& [label, value] : leaves) {
    if (!value.allFinite()) {
      throw std::invalid_argument("leaf '" + label + "' is not finite");
    }
    vars.push_back(tape.leaf(label, value));
  }
  return build(tape, vars);
}

std::vector<Var> gradient_of_gradient(
    Var output, std::span<const Var> inner_wrt,
    const std::function<Var(const std::vector<Var>&)>& outer,
    std::span<const Var> outer_wrt) {
  Tape& tape = *output.tape();
  Var composed = outer(tape.gradient(output, inner_wrt));
  return tape.gradient(composed, outer_wrt);
}

}  // namespace proxflow::ad
