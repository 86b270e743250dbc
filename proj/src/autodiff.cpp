#include "dynens/autodiff.hpp"

#include "dynens/params.hpp"

#include <cmath>
#include <sstream>

namespace dynens::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kAddRow: return "add_row";
    case Op::kBroadcastRows: return "broadcast_rows";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLogSumExpRows: return "logsumexp_rows";
    case Op::kSumCols: return "sum_cols";
    case Op::kMeanCols: return "mean_cols";
    case Op::kMean: return "mean";
    case Op::kGatherRows: return "gather_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kConcatCols: return "concat_cols";
    case Op::kPairDiff: return "pair_diff";
  }
  return "unknown";
}

const Matrix& Var::value() const { return graph->value(*this); }
const Matrix& Var::grad() const { return graph->grad(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ShapeError("node #" + std::to_string(id) + " is not a scalar");
  }
  return v(0, 0);
}

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Matrix sigmoid_of(const Matrix& x) {
  // Split by sign so exp never overflows.
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix softmax_of(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix logsumexp_of(const Matrix& x) {
  Matrix out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out(r, 0) = mx + std::log((x.row(r).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace

void Graph::check_owner(Var v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this graph");
  }
}

void Graph::shape_error(const char* what, Var a, Var b) const {
  std::ostringstream os;
  os << what << ": shape mismatch between node #" << a.id << " ("
     << op_name(nodes_[a.id].op) << ", " << shape_of(nodes_[a.id].value) << ")";
  if (b.id >= 0) {
    os << " and node #" << b.id << " (" << op_name(nodes_[b.id].op) << ", "
       << shape_of(nodes_[b.id].value) << ")";
  }
  throw ShapeError(os.str());
}

Var Graph::push(Node node) {
  if (node.needs_grad) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::kConstant;
  return push(std::move(n));
}

Var Graph::constant_scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Graph::param(const Parameter& p) {
  Node n;
  n.value = p.value;
  if (!track_parameters_) return push(std::move(n));
  n.op = Op::kParameter;
  // Only backward() writes through this pointer, and only on tracking graphs,
  // which callers build from mutable parameter sets.
  n.param = const_cast<Parameter*>(&p);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Graph::record_binary(Op op, Var a, Var b) {
  check_owner(a);
  check_owner(b);
  const Matrix& x = nodes_[a.id].value;
  const Matrix& y = nodes_[b.id].value;
  Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  switch (op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
      if (x.rows() != y.rows() || x.cols() != y.cols()) shape_error(op_name(op), a, b);
      if (op == Op::kAdd) n.value = x + y;
      else if (op == Op::kSub) n.value = x - y;
      else n.value = x.cwiseProduct(y);
      break;
    case Op::kMatMul:
      if (x.cols() != y.rows()) shape_error("matmul", a, b);
      n.value.noalias() = x * y;
      break;
    case Op::kAddRow:
      if (y.rows() != 1 || x.cols() != y.cols()) shape_error("add_row", a, b);
      n.value = x.rowwise() + y.row(0);
      break;
    default:
      throw std::logic_error(std::string("not a binary op: ") + op_name(op));
  }
  return push(std::move(n));
}

Var Graph::record_unary(Op op, Var a, double scalar) {
  check_owner(a);
  const Matrix& x = nodes_[a.id].value;
  Node n;
  n.op = op;
  n.a = a.id;
  n.scalar = scalar;
  n.needs_grad = nodes_[a.id].needs_grad;
  switch (op) {
    case Op::kScale: n.value = x * scalar; break;
    case Op::kAddScalar: n.value = x.array() + scalar; break;
    case Op::kTanh: n.value = x.array().tanh(); break;
    case Op::kSigmoid: n.value = sigmoid_of(x); break;
    case Op::kRelu: n.value = x.cwiseMax(0.0); break;
    case Op::kExp: n.value = x.array().exp(); break;
    case Op::kSoftmaxRows:
      if (x.cols() == 0) shape_error("softmax_rows", a, Var{});
      n.value = softmax_of(x);
      break;
    case Op::kLogSumExpRows:
      if (x.cols() == 0) shape_error("logsumexp_rows", a, Var{});
      n.value = logsumexp_of(x);
      break;
    case Op::kSumCols: n.value = x.rowwise().sum(); break;
    case Op::kMeanCols:
      if (x.cols() == 0) shape_error("mean_cols", a, Var{});
      n.value = x.rowwise().mean();
      break;
    case Op::kMean:
      if (x.size() == 0) shape_error("mean", a, Var{});
      n.value = Matrix::Constant(1, 1, x.mean());
      break;
    default:
      throw std::logic_error(std::string("not a unary op: ") + op_name(op));
  }
  return push(std::move(n));
}

Var Graph::record_gather(Var table, std::vector<int> rows) {
  check_owner(table);
  const Matrix& t = nodes_[table.id].value;
  Node n;
  n.op = Op::kGatherRows;
  n.a = table.id;
  n.needs_grad = nodes_[table.id].needs_grad;
  n.value.resize(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for node #" +
                       std::to_string(table.id) + " (" + shape_of(t) + ")");
    }
    n.value.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  n.index = std::move(rows);
  return push(std::move(n));
}

Var Graph::record_slice(Var a, int start, int count) {
  check_owner(a);
  const Matrix& x = nodes_[a.id].value;
  if (start < 0 || count < 0 || start + count > x.cols()) shape_error("slice_cols", a, Var{});
  Node n;
  n.op = Op::kSliceCols;
  n.a = a.id;
  n.start = start;
  n.needs_grad = nodes_[a.id].needs_grad;
  n.value = x.middleCols(start, count);
  return push(std::move(n));
}

Var Graph::record_concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index rows = -1;
  Eigen::Index cols = 0;
  Node n;
  n.op = Op::kConcatCols;
  for (const Var& p : parts) {
    check_owner(p);
    const Matrix& x = nodes_[p.id].value;
    if (rows >= 0 && x.rows() != rows) shape_error("concat_cols", parts.front(), p);
    rows = x.rows();
    cols += x.cols();
    n.index.push_back(p.id);
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  n.value.resize(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    const Matrix& x = nodes_[p.id].value;
    n.value.middleCols(at, x.cols()) = x;
    at += x.cols();
  }
  return push(std::move(n));
}

Var Graph::record_broadcast(Var row, int rows) {
  check_owner(row);
  const Matrix& x = nodes_[row.id].value;
  if (x.rows() != 1 || rows < 0) shape_error("broadcast_rows", row, Var{});
  Node n;
  n.op = Op::kBroadcastRows;
  n.a = row.id;
  n.needs_grad = nodes_[row.id].needs_grad;
  n.value = x.replicate(rows, 1);
  return push(std::move(n));
}

Var Graph::record_pair_diff(Var scores, std::vector<int> pairs) {
  check_owner(scores);
  const Matrix& s = nodes_[scores.id].value;
  if (s.cols() != 1 || pairs.size() % 2 != 0) shape_error("pair_diff", scores, Var{});
  Node n;
  n.op = Op::kPairDiff;
  n.a = scores.id;
  n.needs_grad = nodes_[scores.id].needs_grad;
  const auto count = static_cast<Eigen::Index>(pairs.size() / 2);
  n.value.resize(count, 1);
  for (Eigen::Index k = 0; k < count; ++k) {
    const int i = pairs[2 * k];
    const int j = pairs[2 * k + 1];
    if (i < 0 || j < 0 || i >= s.rows() || j >= s.rows()) {
      throw ShapeError("pair_diff: index out of range for node #" + std::to_string(scores.id));
    }
    n.value(k, 0) = s(i, 0) - s(j, 0);
  }
  n.index = std::move(pairs);
  return push(std::move(n));
}

void Graph::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (n.needs_grad) n.grad += g;
}

void Graph::backward(Var root) {
  check_owner(root);
  Node& r = nodes_[root.id];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("backward: root node #" + std::to_string(root.id) + " (" +
                     op_name(r.op) + ", " + shape_of(r.value) + ") is not a scalar");
  }
  if (!r.needs_grad) return;
  for (Node& n : nodes_) {
    if (n.needs_grad) n.grad.setZero();
  }
  r.grad(0, 0) = 1.0;
  for (int id = root.id; id >= 0; --id) {
    if (nodes_[id].needs_grad) backprop_node(id);
  }
}

void Graph::backprop_node(int id) {
  // Copy out the pieces we need: accumulate() may touch other nodes but
  // never resizes the vector, so references into nodes_[id] stay valid.
  Node& n = nodes_[id];
  const Matrix& g = n.grad;
  switch (n.op) {
    case Op::kConstant:
      break;
    case Op::kParameter:
      n.param->grad += g;
      break;
    case Op::kAdd:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case Op::kSub:
      accumulate(n.a, g);
      if (nodes_[n.b].needs_grad) nodes_[n.b].grad -= g;
      break;
    case Op::kMul:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad += g.cwiseProduct(nodes_[n.b].value);
      if (nodes_[n.b].needs_grad) nodes_[n.b].grad += g.cwiseProduct(nodes_[n.a].value);
      break;
    case Op::kMatMul:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad.noalias() += g * nodes_[n.b].value.transpose();
      if (nodes_[n.b].needs_grad) nodes_[n.b].grad.noalias() += nodes_[n.a].value.transpose() * g;
      break;
    case Op::kAddRow:
      accumulate(n.a, g);
      if (nodes_[n.b].needs_grad) nodes_[n.b].grad += g.colwise().sum();
      break;
    case Op::kBroadcastRows:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad += g.colwise().sum();
      break;
    case Op::kScale:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad += g * n.scalar;
      break;
    case Op::kAddScalar:
      accumulate(n.a, g);
      break;
    case Op::kTanh:
      if (nodes_[n.a].needs_grad) {
        nodes_[n.a].grad.array() += g.array() * (1.0 - n.value.array().square());
      }
      break;
    case Op::kSigmoid:
      if (nodes_[n.a].needs_grad) {
        nodes_[n.a].grad.array() += g.array() * n.value.array() * (1.0 - n.value.array());
      }
      break;
    case Op::kRelu:
      if (nodes_[n.a].needs_grad) {
        const Matrix& x = nodes_[n.a].value;
        nodes_[n.a].grad.array() += (x.array() > 0.0).select(g.array(), 0.0);
      }
      break;
    case Op::kExp:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad.array() += g.array() * n.value.array();
      break;
    case Op::kSoftmaxRows:
      if (nodes_[n.a].needs_grad) {
        // dx = y * (g - sum(g * y)) per row
        const Matrix& y = n.value;
        const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
        nodes_[n.a].grad.array() += y.array() * (g.colwise() - dot).array();
      }
      break;
    case Op::kLogSumExpRows:
      if (nodes_[n.a].needs_grad) {
        const Matrix soft = softmax_of(nodes_[n.a].value);
        nodes_[n.a].grad.array() += soft.array().colwise() * g.col(0).array();
      }
      break;
    case Op::kSumCols:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad.colwise() += g.col(0);
      break;
    case Op::kMeanCols:
      if (nodes_[n.a].needs_grad) {
        const double inv = 1.0 / static_cast<double>(nodes_[n.a].value.cols());
        nodes_[n.a].grad.colwise() += g.col(0) * inv;
      }
      break;
    case Op::kMean:
      if (nodes_[n.a].needs_grad) {
        const double inv = 1.0 / static_cast<double>(nodes_[n.a].value.size());
        nodes_[n.a].grad.array() += g(0, 0) * inv;
      }
      break;
    case Op::kGatherRows:
      if (nodes_[n.a].needs_grad) {
        Matrix& tg = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.index.size(); ++i) {
          tg.row(n.index[i]) += g.row(static_cast<Eigen::Index>(i));
        }
      }
      break;
    case Op::kSliceCols:
      if (nodes_[n.a].needs_grad) nodes_[n.a].grad.middleCols(n.start, g.cols()) += g;
      break;
    case Op::kConcatCols: {
      Eigen::Index at = 0;
      for (int pid : n.index) {
        const Eigen::Index c = nodes_[pid].value.cols();
        if (nodes_[pid].needs_grad) nodes_[pid].grad += g.middleCols(at, c);
        at += c;
      }
      break;
    }
    case Op::kPairDiff:
      if (nodes_[n.a].needs_grad) {
        Matrix& sg = nodes_[n.a].grad;
        for (std::size_t k = 0; k < n.index.size() / 2; ++k) {
          const double gk = g(static_cast<Eigen::Index>(k), 0);
          sg(n.index[2 * k], 0) += gk;
          sg(n.index[2 * k + 1], 0) -= gk;
        }
      }
      break;
  }
}

Var add(Var a, Var b) { return a.graph->record_binary(Op::kAdd, a, b); }
Var sub(Var a, Var b) { return a.graph->record_binary(Op::kSub, a, b); }
Var mul(Var a, Var b) { return a.graph->record_binary(Op::kMul, a, b); }
Var matmul(Var a, Var b) { return a.graph->record_binary(Op::kMatMul, a, b); }
Var add_row(Var a, Var row) { return a.graph->record_binary(Op::kAddRow, a, row); }
Var broadcast_rows(Var row, int rows) { return row.graph->record_broadcast(row, rows); }
Var scale(Var a, double c) { return a.graph->record_unary(Op::kScale, a, c); }
Var add_scalar(Var a, double c) { return a.graph->record_unary(Op::kAddScalar, a, c); }
Var tanh(Var a) { return a.graph->record_unary(Op::kTanh, a); }
Var sigmoid(Var a) { return a.graph->record_unary(Op::kSigmoid, a); }
Var relu(Var a) { return a.graph->record_unary(Op::kRelu, a); }
Var exp(Var a) { return a.graph->record_unary(Op::kExp, a); }
Var softmax_rows(Var a) { return a.graph->record_unary(Op::kSoftmaxRows, a); }
Var logsumexp_rows(Var a) { return a.graph->record_unary(Op::kLogSumExpRows, a); }
Var sum_cols(Var a) { return a.graph->record_unary(Op::kSumCols, a); }
Var mean_cols(Var a) { return a.graph->record_unary(Op::kMeanCols, a); }
Var mean(Var a) { return a.graph->record_unary(Op::kMean, a); }
Var gather_rows(Var table, std::vector<int> rows) {
  return table.graph->record_gather(table, std::move(rows));
}
Var slice_cols(Var a, int start, int count) { return a.graph->record_slice(a, start, count); }
Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  return parts.front().graph->record_concat(parts);
}
Var pair_diff(Var scores, std::vector<int> pairs) {
  return scores.graph->record_pair_diff(scores, std::move(pairs));
}

}  // namespace dynens::ad
