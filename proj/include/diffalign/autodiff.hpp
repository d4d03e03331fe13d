#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace diffalign::ad {

using Mat = Eigen::MatrixXd;

// Small reverse-mode engine on dense float64 matrices.
//
// Every backward rule is written in terms of the same op set, so the nodes
// produced by one call to Graph::gradients() are ordinary graph nodes and can
// be differentiated again. Losses that depend on an input gradient of the
// network (the score-matching objective does) get exact parameter gradients
// from a second sweep, with no finite-difference or hand-derived
// second-order terms anywhere.
//
// Values are computed eagerly when a node is created; node ids are therefore
// already in topological order and a backward sweep is a single descending
// pass over ids.

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,        // elementwise, same shape
  kSub,
  kMul,
  kAddRow,     // [B,m] + [1,m]
  kScale,      // * c
  kAddScalar,  // + c
  kMatMul,     // [B,n] x [n,m]
  kTranspose,
  kExp,
  kLog,
  kSqrt,
  kReciprocal,
  kSigmoid,
  kRowSum,     // [B,m] -> [B,1]
  kColSum,     // [B,m] -> [1,m]
  kSumAll,     // [B,m] -> [1,1]
  kBcastRows,  // [1,m] -> [B,m]
  kBcastCols,  // [B,1] -> [B,m]
  kConcatCols,
  kSliceCols,  // columns [first, first+count)
  kPadCols,    // place into zero matrix of `count` columns at `first`
  kReshape,    // row-major element order
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Mat value);
  Var constant(Mat value) { return leaf(std::move(value)); }
  Var scalar(double v);

  const Mat& value(Var v) const;
  int size() const { return static_cast<int>(nodes_.size()); }
  void reserve(int n) { nodes_.reserve(n); }

  // d(output)/d(wrt[i]), appended to this graph as new nodes. `output` must
  // be 1x1. Entries of `wrt` that `output` does not depend on get zero
  // gradients of the right shape.
  std::vector<Var> gradients(Var output, const std::vector<Var>& wrt);

 private:
  struct Node {
    Mat value;
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    double c = 0.0;  // scalar payload (kScale, kAddScalar)
    int i0 = 0;      // int payloads (slice offsets, reshape rows, ...)
    int i1 = 0;
  };

  Var emit(Node node);
  const Node& at(int id) const { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;

  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var add_row(Var, Var);
  friend Var scale(Var, double);
  friend Var add_scalar(Var, double);
  friend Var matmul(Var, Var);
  friend Var transpose(Var);
  friend Var exp(Var);
  friend Var log(Var);
  friend Var sqrt(Var);
  friend Var reciprocal(Var);
  friend Var sigmoid(Var);
  friend Var rowsum(Var);
  friend Var colsum(Var);
  friend Var sum_all(Var);
  friend Var bcast_rows(Var, int);
  friend Var bcast_cols(Var, int);
  friend Var concat_cols(Var, Var);
  friend Var slice_cols(Var, int, int);
  friend Var pad_cols(Var, int, int);
  friend Var reshape(Var, int, int);
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var x, Var row);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var matmul(Var a, Var b);
Var transpose(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var reciprocal(Var x);
Var sigmoid(Var x);
Var rowsum(Var x);
Var colsum(Var x);
Var sum_all(Var x);
Var bcast_rows(Var row, int rows);
Var bcast_cols(Var col, int cols);
Var concat_cols(Var a, Var b);
Var slice_cols(Var x, int first, int count);
Var pad_cols(Var x, int first, int total_cols);
Var reshape(Var x, int rows, int cols);

// Conveniences composed from the primitives above.
inline Var neg(Var x) { return scale(x, -1.0); }
inline Var silu(Var x) { return mul(x, sigmoid(x)); }
inline Var square(Var x) { return mul(x, x); }

// Rowwise max of the current value as a detached [B,1] constant. Used for
// numerically stable log-sum-exp; subtracting a constant does not change
// any derivative.
Var rowmax_const(Var x);

// log(sum_j exp(x_ij)) as a [B,1] column, with detached max subtraction.
Var logsumexp_rows(Var x);

}  // namespace diffalign::ad
