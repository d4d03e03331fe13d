#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Core>
#include <cmath>

#include "diffalign/autodiff.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/rng.hpp"

using diffalign::Rng;
using namespace diffalign::ad;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Finite-difference check of d(scalar)/d(leaf) for an arbitrary graph
// builder. The builder is re-run with perturbed leaf values.
void check_gradient(const std::function<double(const Mat&)>& f, const Mat& at, const Mat& grad,
                    double tol = 1e-6) {
  const double h = 1e-6;
  for (int i = 0; i < at.rows(); ++i) {
    for (int j = 0; j < at.cols(); ++j) {
      Mat p = at;
      p(i, j) += h;
      double up = f(p);
      p(i, j) -= 2 * h;
      double down = f(p);
      double fd = (up - down) / (2 * h);
      CAPTURE(i);
      CAPTURE(j);
      CHECK(std::abs(fd - grad(i, j)) < tol * std::max(1.0, std::abs(fd)));
    }
  }
}

}  // namespace

TEST_CASE("elementwise ops and reductions match finite differences") {
  Rng rng(7);
  Mat x0 = random_mat(rng, 3, 4);
  Mat w0 = random_mat(rng, 4, 2);

  auto value = [&](const Mat& x) {
    Graph g;
    Var x_leaf = g.leaf(x);
    Var w_leaf = g.leaf(w0);
    Var h = silu(matmul(x_leaf, w_leaf));
    Var z = mul(h, sigmoid(h));
    Var out = sum_all(mul(z, z));
    return g.value(out)(0, 0);
  };

  Graph g;
  Var x_leaf = g.leaf(x0);
  Var w_leaf = g.leaf(w0);
  Var h = silu(matmul(x_leaf, w_leaf));
  Var z = mul(h, sigmoid(h));
  Var out = sum_all(mul(z, z));
  auto grads = g.gradients(out, {x_leaf});
  check_gradient(value, x0, g.value(grads[0]));
}

TEST_CASE("log, sqrt, reciprocal, exp chain") {
  Rng rng(11);
  Mat x0 = random_mat(rng, 2, 3).array().abs() + 0.5;

  auto build = [&](Graph& g, const Mat& x, Var& x_leaf) {
    x_leaf = g.leaf(x);
    Var a = log(add_scalar(mul(x_leaf, x_leaf), 1.0));
    Var b = sqrt(add_scalar(exp(scale(a, -0.5)), 0.2));
    Var c = reciprocal(add_scalar(b, 1.0));
    return sum_all(mul(c, a));
  };

  Graph g;
  Var x_leaf;
  Var out = build(g, x0, x_leaf);
  auto grads = g.gradients(out, {x_leaf});
  check_gradient(
      [&](const Mat& x) {
        Graph g2;
        Var leaf;
        return g2.value(build(g2, x, leaf))(0, 0);
      },
      x0, g.value(grads[0]));
}

TEST_CASE("broadcast, concat, slice, reshape, add_row") {
  Rng rng(13);
  Mat x0 = random_mat(rng, 4, 3);
  Mat r0 = random_mat(rng, 1, 3);

  auto build = [&](Graph& g, const Mat& x, const Mat& r, Var& x_leaf, Var& r_leaf) {
    x_leaf = g.leaf(x);
    r_leaf = g.leaf(r);
    Var a = add_row(x_leaf, r_leaf);
    Var b = concat_cols(a, mul(a, a));            // [4, 6]
    Var c = slice_cols(b, 2, 3);                  // [4, 3]
    Var d = reshape(c, 3, 4);                     // row-major reshuffle
    Var col = rowsum(d);                          // [3, 1]
    Var wide = bcast_cols(col, 4);                // [3, 4]
    Var row = colsum(mul(wide, d));               // [1, 4]
    Var tall = bcast_rows(row, 3);
    return sum_all(mul(tall, tall));
  };

  Graph g;
  Var xl, rl;
  Var out = build(g, x0, r0, xl, rl);
  auto grads = g.gradients(out, {xl, rl});

  check_gradient(
      [&](const Mat& x) {
        Graph g2;
        Var a, b;
        return g2.value(build(g2, x, r0, a, b))(0, 0);
      },
      x0, g.value(grads[0]));
  check_gradient(
      [&](const Mat& r) {
        Graph g2;
        Var a, b;
        return g2.value(build(g2, x0, r0 * 0 + r, a, b))(0, 0);
      },
      r0, g.value(grads[1]));
}

TEST_CASE("second-order: gradient of a gradient-dependent scalar is exact") {
  // psi(w) = sum_i g_i(w)^2 where g = d(sum f)/d(x) and f = silu(x w) summed.
  // The analytic check is a finite difference of psi in w, which requires
  // the engine to differentiate through its own backward pass.
  Rng rng(17);
  Mat x0 = random_mat(rng, 3, 2);
  Mat w0 = random_mat(rng, 2, 1);

  auto psi = [&](const Mat& w) {
    Graph g;
    Var x_leaf = g.leaf(x0);
    Var w_leaf = g.leaf(w);
    Var f = silu(matmul(x_leaf, w_leaf));
    Var input_grad = g.gradients(sum_all(f), {x_leaf})[0];
    Var out = sum_all(mul(input_grad, input_grad));
    return g.value(out)(0, 0);
  };

  Graph g;
  Var x_leaf = g.leaf(x0);
  Var w_leaf = g.leaf(w0);
  Var f = silu(matmul(x_leaf, w_leaf));
  Var input_grad = g.gradients(sum_all(f), {x_leaf})[0];
  Var out = sum_all(mul(input_grad, input_grad));
  auto grads = g.gradients(out, {w_leaf});
  check_gradient(psi, w0, g.value(grads[0]), 1e-5);
}

TEST_CASE("third-order composition stays consistent") {
  // Differentiate a scalar built from a second-order quantity; compares the
  // whole pipeline against finite differences of a first-order pipeline.
  Rng rng(23);
  Mat x0 = random_mat(rng, 2, 2, 0.7);

  auto phi = [&](const Mat& x) {
    Graph g;
    Var xl = g.leaf(x);
    Var f = sum_all(mul(sigmoid(xl), xl));
    Var gx = g.gradients(f, {xl})[0];
    Var h = sum_all(mul(gx, gx));
    Var gx2 = g.gradients(h, {xl})[0];
    return g.value(sum_all(mul(gx2, sigmoid(xl))))(0, 0);
  };

  Graph g;
  Var xl = g.leaf(x0);
  Var f = sum_all(mul(sigmoid(xl), xl));
  Var gx = g.gradients(f, {xl})[0];
  Var h = sum_all(mul(gx, gx));
  Var gx2 = g.gradients(h, {xl})[0];
  Var out = sum_all(mul(gx2, sigmoid(xl)));
  auto grads = g.gradients(out, {xl});
  check_gradient(phi, x0, g.value(grads[0]), 1e-4);
}

TEST_CASE("logsumexp is stable and exact") {
  Graph g;
  Mat z(2, 3);
  z << 1000.0, 1001.0, 999.0, -3.0, -3.0, -3.0;
  Var zl = g.leaf(z);
  Var lse = logsumexp_rows(zl);
  double expected0 = 1001.0 + std::log(std::exp(-1.0) + 1.0 + std::exp(-2.0));
  CHECK(g.value(lse)(0, 0) == doctest::Approx(expected0).epsilon(1e-12));
  CHECK(g.value(lse)(1, 0) == doctest::Approx(-3.0 + std::log(3.0)).epsilon(1e-12));

  // Gradient of LSE is the softmax.
  auto grads = g.gradients(sum_all(lse), {zl});
  const Mat& gz = g.value(grads[0]);
  CHECK(gz.row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gz(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("unreachable wrt vars get zero gradients") {
  Graph g;
  Var a = g.leaf(Mat::Ones(2, 2));
  Var b = g.leaf(Mat::Ones(2, 2));
  Var out = sum_all(mul(a, a));
  auto grads = g.gradients(out, {b});
  CHECK(g.value(grads[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shape mismatches raise ShapeError") {
  Graph g;
  Var a = g.leaf(Mat::Ones(2, 2));
  Var b = g.leaf(Mat::Ones(3, 2));
  CHECK_THROWS_AS((void)add(a, b), diffalign::ShapeError);
  CHECK_THROWS_AS((void)matmul(a, b), diffalign::ShapeError);
  CHECK_THROWS_AS((void)g.gradients(a, {b}), diffalign::ShapeError);
}
