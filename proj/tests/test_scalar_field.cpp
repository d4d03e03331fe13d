#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffalign/errors.hpp"
#include "diffalign/scalar_field.hpp"
#include "test_support.hpp"

using namespace diffalign;

namespace {

FieldConfig small_config() {
  FieldConfig cfg;
  cfg.action_dim = 2;
  cfg.state_dim = 0;
  cfg.time_embed_dim = 8;
  cfg.width = 16;
  cfg.blocks = 2;
  return cfg;
}

Mat random_actions(Rng& rng, int n, int dim, double scale = 1.0) {
  Mat a(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) a(i, j) = scale * rng.normal();
  }
  return a;
}

}  // namespace

TEST_CASE("init is deterministic in the seed and seeds differ") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p1 = init_params(42, cfg);
  ScalarFieldParams p2 = init_params(42, cfg);
  ScalarFieldParams p3 = init_params(43, cfg);
  CHECK(p1.flat == p2.flat);
  CHECK(p1.flat != p3.flat);
  CHECK(static_cast<long>(p1.flat.size()) == layout_of(cfg).total);
}

TEST_CASE("zero width is a config error") {
  FieldConfig cfg = small_config();
  cfg.width = 0;
  CHECK_THROWS_AS((void)init_params(1, cfg), ConfigError);
}

TEST_CASE("forward is finite, deterministic, and small at init") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(7, cfg);
  Rng rng(1);
  // Unit-ball inputs at several times.
  for (int trial = 0; trial < 50; ++trial) {
    Vec a(2);
    a << rng.normal(), rng.normal();
    if (a.norm() > 1.0) a /= a.norm();
    double t = rng.uniform01();
    double f1 = field_value(p, a, Vec(0), t);
    double f2 = field_value(p, a, Vec(0), t);
    CHECK(std::isfinite(f1));
    CHECK(f1 == f2);
    CHECK(std::abs(f1) < 10.0);
  }
}

TEST_CASE("identical parameter values give bit-identical outputs") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(11, cfg);
  ScalarFieldParams q = p;  // value copy
  Rng rng(2);
  Mat a = random_actions(rng, 5, 2);
  Vec t(5);
  for (int i = 0; i < 5; ++i) t[i] = rng.uniform01();
  Vec fa = field_values(p, a, Mat(5, 0), t);
  Vec fb = field_values(q, a, Mat(5, 0), t);
  for (int i = 0; i < 5; ++i) CHECK(fa[i] == fb[i]);
}

TEST_CASE("input gradient matches central finite differences within 1e-4") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(5, cfg);
  Rng rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    Vec a(2);
    a << rng.normal(), rng.normal();
    double t = rng.uniform(0.05, 1.0);
    Vec grad = field_input_gradient(p, a, Vec(0), t);
    for (int j = 0; j < 2; ++j) {
      Vec up = a, down = a;
      up[j] += h;
      down[j] -= h;
      double fd = (field_value(p, up, Vec(0), t) - field_value(p, down, Vec(0), t)) / (2 * h);
      CHECK(test_support::rel_error(grad[j], fd) < 1e-4);
    }
  }
}

TEST_CASE("gradient machinery recovers a planted linear field exactly") {
  // f(a) = a . w built from the same graph primitives the field uses.
  ad::Graph g;
  Mat a0(3, 2);
  a0 << 0.5, -1.0, 2.0, 0.25, -0.75, 1.5;
  Mat w0(2, 1);
  w0 << 1.25, -0.5;
  ad::Var a = g.leaf(a0);
  ad::Var w = g.leaf(w0);
  ad::Var f = ad::matmul(a, w);
  ad::Var grad = g.gradients(ad::sum_all(f), {a})[0];
  const Mat& ga = g.value(grad);
  for (int i = 0; i < 3; ++i) {
    CHECK(ga(i, 0) == w0(0, 0));
    CHECK(ga(i, 1) == w0(1, 0));
  }
}

TEST_CASE("score equals the input gradient and respects t_min") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(9, cfg);
  DiffusionSchedule sch;
  Vec a(2);
  a << 0.3, -0.4;
  double t = 0.5;
  Vec s = field_score(p, a, Vec(0), t, sch);
  Vec g = field_input_gradient(p, a, Vec(0), t);
  CHECK(s == g);
  CHECK_THROWS_AS((void)field_score(p, a, Vec(0), sch.t_min / 2, sch), InputError);
}

TEST_CASE("score is continuous in the action") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(13, cfg);
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Vec a(2);
    a << rng.normal(), rng.normal();
    Vec d(2);
    d << 1e-6, -1e-6;
    Vec s1 = field_score(p, a, Vec(0), 0.4, DiffusionSchedule{});
    Vec s2 = field_score(p, a + d, Vec(0), 0.4, DiffusionSchedule{});
    CHECK((s1 - s2).norm() < 1e-4);
  }
}

TEST_CASE("non-finite and out-of-range inputs are rejected") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(15, cfg);
  Vec a(2);
  a << std::nan(""), 0.0;
  CHECK_THROWS_AS((void)field_value(p, a, Vec(0), 0.5), InputError);
  Vec b(2);
  b.setZero();
  CHECK_THROWS_AS((void)field_value(p, b, Vec(0), 1.5), InputError);
  Vec wrong(3);
  wrong.setZero();
  CHECK_THROWS_AS((void)field_value(p, wrong, Vec(0), 0.5), ShapeError);
}

TEST_CASE("dropout masks only perturb the training path") {
  FieldConfig cfg = small_config();
  cfg.dropout = 0.5;
  ScalarFieldParams p = init_params(21, cfg);
  Rng rng(6);
  Mat a = random_actions(rng, 4, 2);
  Vec t = Vec::Constant(4, 0.5);

  // Inference path ignores the dropout setting entirely.
  Vec clean1 = field_values(p, a, Mat(4, 0), t);
  Vec clean2 = field_values(p, a, Mat(4, 0), t);
  CHECK(clean1 == clean2);

  // The training path with masks differs from the identity path.
  Rng mask_rng(7);
  auto masks = make_dropout_masks(cfg, 4, mask_rng);
  REQUIRE(masks.size() == 2);
  ad::Graph g;
  FieldGraph fg = build_field(g, p, a, Mat(4, 0), t, &masks);
  Vec dropped = g.value(fg.values).col(0);
  CHECK(dropped != clean1);

  // Masks are scaled inverted dropout with entries in {0, 1/keep}.
  for (const auto& m : masks) {
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) {
        bool ok = m(i, j) == 0.0 || m(i, j) == doctest::Approx(2.0);
        CHECK(ok);
      }
    }
  }

  // No masks are generated when dropout is off.
  FieldConfig off = small_config();
  Rng r2(8);
  CHECK(make_dropout_masks(off, 4, r2).empty());
}

TEST_CASE("batched evaluation agrees with single-row evaluation") {
  FieldConfig cfg = small_config();
  ScalarFieldParams p = init_params(33, cfg);
  Rng rng(9);
  Mat a = random_actions(rng, 6, 2);
  Vec t(6);
  for (int i = 0; i < 6; ++i) t[i] = rng.uniform(0.1, 1.0);
  Vec batch = field_values(p, a, Mat(6, 0), t);
  Mat grads = field_input_gradients(p, a, Mat(6, 0), t);
  for (int i = 0; i < 6; ++i) {
    CHECK(batch[i] == doctest::Approx(field_value(p, a.row(i), Vec(0), t[i])).epsilon(1e-12));
    Vec g = field_input_gradient(p, a.row(i), Vec(0), t[i]);
    CHECK((grads.row(i).transpose() - g).norm() < 1e-12);
  }
}

TEST_CASE("state conditioning changes the output") {
  FieldConfig cfg = small_config();
  cfg.state_dim = 3;
  ScalarFieldParams p = init_params(27, cfg);
  Vec a(2);
  a << 0.1, 0.2;
  Vec s1(3), s2(3);
  s1 << 0.0, 0.0, 0.0;
  s2 << 1.0, -1.0, 0.5;
  CHECK(field_value(p, a, s1, 0.5) != field_value(p, a, s2, 0.5));
}
