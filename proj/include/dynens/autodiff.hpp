#pragma once

// Define-by-run reverse-mode differentiation over small dense matrices.
//
// Every operation evaluates eagerly when it is recorded, so the node list is
// already in topological order. backward() walks it in reverse and
// accumulates gradients into the Parameter leaves that produced them.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynens {

using Matrix = Eigen::MatrixXd;

class Parameter;

namespace ad {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kAddRow,
  kBroadcastRows,
  kScale,
  kAddScalar,
  kTanh,
  kSigmoid,
  kRelu,
  kExp,
  kSoftmaxRows,
  kLogSumExpRows,
  kSumCols,
  kMeanCols,
  kMean,
  kGatherRows,
  kSliceCols,
  kConcatCols,
  kPairDiff,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

class Graph {
 public:
  /// With `track_parameters` false, parameter leaves are recorded as
  /// constants and backward() never touches Parameter::grad.
  explicit Graph(bool track_parameters = true) : track_parameters_(track_parameters) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var constant_scalar(double value);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var param(const Parameter& param);
  bool tracks_parameters() const { return track_parameters_; }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and propagates to every node that depends on
  /// a parameter. The root must be 1x1.
  void backward(Var root);

  // Primitive recorders. Free functions below are the public spelling.
  Var record_binary(Op op, Var a, Var b);
  Var record_unary(Op op, Var a, double scalar = 0.0);
  Var record_gather(Var table, std::vector<int> rows);
  Var record_slice(Var a, int start, int count);
  Var record_concat(std::span<const Var> parts);
  Var record_broadcast(Var row, int rows);
  Var record_pair_diff(Var scores, std::vector<int> pairs);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Op op = Op::kConstant;
    int a = -1;
    int b = -1;
    double scalar = 0.0;
    int start = 0;
    std::vector<int> index;  // gather rows, concat parents, pair endpoints
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Node node);
  void check_owner(Var v) const;
  [[noreturn]] void shape_error(const char* what, Var a, Var b) const;
  void accumulate(int id, const Matrix& g);
  void backprop_node(int id);

  std::vector<Node> nodes_;
  bool track_parameters_ = true;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Element-wise product.
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
/// a (r x c) + row (1 x c), broadcast across rows.
Var add_row(Var a, Var row);
/// Repeats a 1 x c row vector `rows` times.
Var broadcast_rows(Var row, int rows);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
/// max(0, x); the subgradient at the kink is 0.
Var relu(Var a);
Var exp(Var a);
/// Row-wise softmax with max subtraction.
Var softmax_rows(Var a);
Var logsumexp_rows(Var a);
/// r x c -> r x 1 row sums.
Var sum_cols(Var a);
Var mean_cols(Var a);
/// Mean over all entries, 1 x 1.
Var mean(Var a);
/// Picks rows of `table` (an embedding lookup).
Var gather_rows(Var table, std::vector<int> rows);
Var slice_cols(Var a, int start, int count);
Var concat_cols(std::span<const Var> parts);
/// For a column of scores s and index pairs (i0, j0, i1, j1, ...), returns
/// the column s[i_k] - s[j_k].
Var pair_diff(Var scores, std::vector<int> pairs);

}  // namespace ad
}  // namespace dynens
