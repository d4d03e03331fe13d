#include "diffalign/autodiff.hpp"

#include <cmath>
#include <string>

#include "diffalign/errors.hpp"

namespace diffalign::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(std::string("autodiff: ") + what);
}

void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw InputError("autodiff: vars belong to different graphs");
}

}  // namespace

Var Graph::emit(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Mat value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::kLeaf;
  return emit(std::move(n));
}

Var Graph::scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return leaf(std::move(m));
}

const Mat& Graph::value(Var v) const {
  if (!v.valid() || v.graph != this || v.id >= size()) {
    throw InputError("autodiff: invalid var handle");
  }
  return nodes_[static_cast<size_t>(v.id)].value;
}

Var add(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = *a.graph;
  const Mat& va = g.at(a.id).value;
  const Mat& vb = g.at(b.id).value;
  require(va.rows() == vb.rows() && va.cols() == vb.cols(), "add: shape mismatch");
  Graph::Node n;
  n.value = va + vb;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  return g.emit(std::move(n));
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = *a.graph;
  const Mat& va = g.at(a.id).value;
  const Mat& vb = g.at(b.id).value;
  require(va.rows() == vb.rows() && va.cols() == vb.cols(), "sub: shape mismatch");
  Graph::Node n;
  n.value = va - vb;
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  return g.emit(std::move(n));
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = *a.graph;
  const Mat& va = g.at(a.id).value;
  const Mat& vb = g.at(b.id).value;
  require(va.rows() == vb.rows() && va.cols() == vb.cols(), "mul: shape mismatch");
  Graph::Node n;
  n.value = va.cwiseProduct(vb);
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  return g.emit(std::move(n));
}

Var add_row(Var x, Var row) {
  require_same_graph(x, row);
  Graph& g = *x.graph;
  const Mat& vx = g.at(x.id).value;
  const Mat& vr = g.at(row.id).value;
  require(vr.rows() == 1 && vr.cols() == vx.cols(), "add_row: row shape mismatch");
  Graph::Node n;
  n.value = vx.rowwise() + vr.row(0);
  n.op = Op::kAddRow;
  n.a = x.id;
  n.b = row.id;
  return g.emit(std::move(n));
}

Var scale(Var x, double c) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value * c;
  n.op = Op::kScale;
  n.a = x.id;
  n.c = c;
  return g.emit(std::move(n));
}

Var add_scalar(Var x, double c) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.array() + c;
  n.op = Op::kAddScalar;
  n.a = x.id;
  n.c = c;
  return g.emit(std::move(n));
}

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = *a.graph;
  const Mat& va = g.at(a.id).value;
  const Mat& vb = g.at(b.id).value;
  require(va.cols() == vb.rows(), "matmul: inner dimension mismatch");
  Graph::Node n;
  n.value = va * vb;
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  return g.emit(std::move(n));
}

Var transpose(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.transpose();
  n.op = Op::kTranspose;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var exp(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.array().exp();
  n.op = Op::kExp;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var log(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.array().log();
  n.op = Op::kLog;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var sqrt(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.array().sqrt();
  n.op = Op::kSqrt;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var reciprocal(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.array().inverse();
  n.op = Op::kReciprocal;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var sigmoid(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  // 1 / (1 + exp(-z)), stable on both tails.
  n.value = g.at(x.id).value.unaryExpr([](double z) {
    if (z >= 0.0) {
      return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
  });
  n.op = Op::kSigmoid;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var rowsum(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.rowwise().sum();
  n.op = Op::kRowSum;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var colsum(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  n.value = g.at(x.id).value.colwise().sum();
  n.op = Op::kColSum;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var sum_all(Var x) {
  Graph& g = *x.graph;
  Graph::Node n;
  Mat m(1, 1);
  m(0, 0) = g.at(x.id).value.sum();
  n.value = std::move(m);
  n.op = Op::kSumAll;
  n.a = x.id;
  return g.emit(std::move(n));
}

Var bcast_rows(Var row, int rows) {
  Graph& g = *row.graph;
  const Mat& v = g.at(row.id).value;
  require(v.rows() == 1, "bcast_rows: input must have one row");
  Graph::Node n;
  n.value = v.replicate(rows, 1);
  n.op = Op::kBcastRows;
  n.a = row.id;
  n.i0 = rows;
  return g.emit(std::move(n));
}

Var bcast_cols(Var col, int cols) {
  Graph& g = *col.graph;
  const Mat& v = g.at(col.id).value;
  require(v.cols() == 1, "bcast_cols: input must have one column");
  Graph::Node n;
  n.value = v.replicate(1, cols);
  n.op = Op::kBcastCols;
  n.a = col.id;
  n.i0 = cols;
  return g.emit(std::move(n));
}

Var concat_cols(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = *a.graph;
  const Mat& va = g.at(a.id).value;
  const Mat& vb = g.at(b.id).value;
  require(va.rows() == vb.rows(), "concat_cols: row count mismatch");
  Graph::Node n;
  Mat m(va.rows(), va.cols() + vb.cols());
  m.leftCols(va.cols()) = va;
  m.rightCols(vb.cols()) = vb;
  n.value = std::move(m);
  n.op = Op::kConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.i0 = static_cast<int>(va.cols());
  return g.emit(std::move(n));
}

Var slice_cols(Var x, int first, int count) {
  Graph& g = *x.graph;
  const Mat& v = g.at(x.id).value;
  require(first >= 0 && count >= 0 && first + count <= v.cols(), "slice_cols: out of range");
  Graph::Node n;
  n.value = v.middleCols(first, count);
  n.op = Op::kSliceCols;
  n.a = x.id;
  n.i0 = first;
  n.i1 = count;
  return g.emit(std::move(n));
}

Var pad_cols(Var x, int first, int total_cols) {
  Graph& g = *x.graph;
  const Mat& v = g.at(x.id).value;
  require(first >= 0 && first + v.cols() <= total_cols, "pad_cols: out of range");
  Graph::Node n;
  Mat m = Mat::Zero(v.rows(), total_cols);
  m.middleCols(first, v.cols()) = v;
  n.value = std::move(m);
  n.op = Op::kPadCols;
  n.a = x.id;
  n.i0 = first;
  n.i1 = total_cols;
  return g.emit(std::move(n));
}

Var reshape(Var x, int rows, int cols) {
  Graph& g = *x.graph;
  const Mat& v = g.at(x.id).value;
  require(static_cast<long>(rows) * cols == v.size(), "reshape: element count mismatch");
  Graph::Node n;
  // Row-major element order regardless of Eigen's storage.
  Mat m(rows, cols);
  long idx = 0;
  for (long r = 0; r < v.rows(); ++r) {
    for (long c = 0; c < v.cols(); ++c) {
      m(idx / cols, idx % cols) = v(r, c);
      ++idx;
    }
  }
  n.value = std::move(m);
  n.op = Op::kReshape;
  n.a = x.id;
  n.i0 = rows;
  n.i1 = cols;
  return g.emit(std::move(n));
}

Var rowmax_const(Var x) {
  Graph& g = *x.graph;
  return g.constant(g.value(x).rowwise().maxCoeff());
}

Var logsumexp_rows(Var x) {
  Graph& g = *x.graph;
  int cols = static_cast<int>(g.value(x).cols());
  Var m = rowmax_const(x);
  Var centered = sub(x, bcast_cols(m, cols));
  return add(log(rowsum(exp(centered))), m);
}

std::vector<Var> Graph::gradients(Var output, const std::vector<Var>& wrt) {
  if (!output.valid() || output.graph != this) {
    throw InputError("gradients: invalid output var");
  }
  const Mat& ov = at(output.id).value;
  if (ov.rows() != 1 || ov.cols() != 1) {
    throw ShapeError("gradients: output must be a 1x1 scalar");
  }
  const int frontier = output.id + 1;

  // reach[i]: node i depends on at least one of `wrt`.
  std::vector<char> reach(static_cast<size_t>(frontier), 0);
  for (Var w : wrt) {
    if (!w.valid() || w.graph != this) throw InputError("gradients: invalid wrt var");
    if (w.id < frontier) reach[static_cast<size_t>(w.id)] = 1;
  }
  for (int i = 0; i < frontier; ++i) {
    const Node& nd = nodes_[static_cast<size_t>(i)];
    if ((nd.a >= 0 && reach[static_cast<size_t>(nd.a)]) ||
        (nd.b >= 0 && reach[static_cast<size_t>(nd.b)])) {
      reach[static_cast<size_t>(i)] = 1;
    }
  }

  std::vector<int> grad(static_cast<size_t>(frontier), -1);
  auto zero_like = [&](Var v) { return constant(Mat::Zero(value(v).rows(), value(v).cols())); };

  auto collect = [&]() {
    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
      int gid = w.id < frontier ? grad[static_cast<size_t>(w.id)] : -1;
      out.push_back(gid >= 0 ? Var{this, gid} : zero_like(w));
    }
    return out;
  };

  if (!reach[static_cast<size_t>(output.id)]) {
    return collect();
  }

  grad[static_cast<size_t>(output.id)] = scalar(1.0).id;

  // Only the header fields are copied out of each node; emitting gradient
  // nodes may reallocate the pool, and copying the value matrix would
  // dominate the sweep.
  struct Header {
    Op op;
    int a, b;
    double c;
    int i0, i1;
  };
  for (int i = output.id; i >= 0; --i) {
    if (grad[static_cast<size_t>(i)] < 0) continue;
    const Node& ref = nodes_[static_cast<size_t>(i)];
    const Header nd{ref.op, ref.a, ref.b, ref.c, ref.i0, ref.i1};
    if (nd.op == Op::kLeaf) continue;

    Var self{this, i};
    Var gy{this, grad[static_cast<size_t>(i)]};
    auto accumulate = [&](int input, Var g) {
      if (input < 0 || !reach[static_cast<size_t>(input)]) return;
      int& slot = grad[static_cast<size_t>(input)];
      slot = slot < 0 ? g.id : add(Var{this, slot}, g).id;
    };
    auto want = [&](int input) { return input >= 0 && reach[static_cast<size_t>(input)]; };

    switch (nd.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        accumulate(nd.a, gy);
        accumulate(nd.b, gy);
        break;
      case Op::kSub:
        accumulate(nd.a, gy);
        if (want(nd.b)) accumulate(nd.b, neg(gy));
        break;
      case Op::kMul:
        if (want(nd.a)) accumulate(nd.a, mul(gy, Var{this, nd.b}));
        if (want(nd.b)) accumulate(nd.b, mul(gy, Var{this, nd.a}));
        break;
      case Op::kAddRow:
        accumulate(nd.a, gy);
        if (want(nd.b)) accumulate(nd.b, colsum(gy));
        break;
      case Op::kScale:
        if (want(nd.a)) accumulate(nd.a, scale(gy, nd.c));
        break;
      case Op::kAddScalar:
        accumulate(nd.a, gy);
        break;
      case Op::kMatMul:
        if (want(nd.a)) accumulate(nd.a, matmul(gy, transpose(Var{this, nd.b})));
        if (want(nd.b)) accumulate(nd.b, matmul(transpose(Var{this, nd.a}), gy));
        break;
      case Op::kTranspose:
        if (want(nd.a)) accumulate(nd.a, transpose(gy));
        break;
      case Op::kExp:
        if (want(nd.a)) accumulate(nd.a, mul(gy, self));
        break;
      case Op::kLog:
        if (want(nd.a)) accumulate(nd.a, mul(gy, reciprocal(Var{this, nd.a})));
        break;
      case Op::kSqrt:
        if (want(nd.a)) accumulate(nd.a, scale(mul(gy, reciprocal(self)), 0.5));
        break;
      case Op::kReciprocal:
        if (want(nd.a)) accumulate(nd.a, neg(mul(gy, mul(self, self))));
        break;
      case Op::kSigmoid:
        if (want(nd.a)) accumulate(nd.a, mul(gy, mul(self, add_scalar(neg(self), 1.0))));
        break;
      case Op::kRowSum:
        if (want(nd.a)) accumulate(nd.a, bcast_cols(gy, static_cast<int>(at(nd.a).value.cols())));
        break;
      case Op::kColSum:
        if (want(nd.a)) accumulate(nd.a, bcast_rows(gy, static_cast<int>(at(nd.a).value.rows())));
        break;
      case Op::kSumAll:
        if (want(nd.a)) {
          const Mat& av = at(nd.a).value;
          Var expanded = bcast_cols(bcast_rows(gy, static_cast<int>(av.rows())),
                                    static_cast<int>(av.cols()));
          // bcast_rows on [1,1] yields [B,1]; bcast_cols expands to [B,m].
          accumulate(nd.a, expanded);
        }
        break;
      case Op::kBcastRows:
        if (want(nd.a)) accumulate(nd.a, colsum(gy));
        break;
      case Op::kBcastCols:
        if (want(nd.a)) accumulate(nd.a, rowsum(gy));
        break;
      case Op::kConcatCols: {
        int ca = nd.i0;
        int cb = static_cast<int>(at(i).value.cols()) - ca;
        if (want(nd.a)) accumulate(nd.a, slice_cols(gy, 0, ca));
        if (want(nd.b)) accumulate(nd.b, slice_cols(gy, ca, cb));
        break;
      }
      case Op::kSliceCols:
        if (want(nd.a)) {
          accumulate(nd.a, pad_cols(gy, nd.i0, static_cast<int>(at(nd.a).value.cols())));
        }
        break;
      case Op::kPadCols:
        if (want(nd.a)) {
          accumulate(nd.a, slice_cols(gy, nd.i0, static_cast<int>(at(nd.a).value.cols())));
        }
        break;
      case Op::kReshape:
        if (want(nd.a)) {
          const Mat& av = at(nd.a).value;
          accumulate(nd.a,
                     reshape(gy, static_cast<int>(av.rows()), static_cast<int>(av.cols())));
        }
        break;
    }
  }

  return collect();
}

}  // namespace diffalign::ad
