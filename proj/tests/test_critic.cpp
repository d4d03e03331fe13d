#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffalign/alignment.hpp"
#include "diffalign/critic.hpp"
#include "diffalign/errors.hpp"
#include "test_support.hpp"

using namespace diffalign;

namespace {

Mat box_actions(Rng& rng, int n, double half_width = 2.0) {
  Mat a(n, 2);
  for (int i = 0; i < n; ++i) {
    a(i, 0) = rng.uniform(-half_width, half_width);
    a(i, 1) = rng.uniform(-half_width, half_width);
  }
  return a;
}

}  // namespace

TEST_CASE("analytic q fields evaluate exactly") {
  QField radial;
  radial.kind = QField::Kind::kRadial;
  Vec a(2);
  a << 3.0, 4.0;
  CHECK(q_eval(QSource{radial}, Vec(0), a) == -5.0);

  // The radial field peaks at its own center on any grid.
  double best = -1e18;
  Eigen::Vector2d argbest;
  for (double x = -4; x <= 4; x += 0.25) {
    for (double y = -4; y <= 4; y += 0.25) {
      double v = true_q(radial, {x, y});
      if (v > best) {
        best = v;
        argbest = {x, y};
      }
    }
  }
  CHECK(argbest.norm() < 1e-12);

  QField linear;
  linear.kind = QField::Kind::kLinearX;
  CHECK(true_q(linear, {1.0, -2.0}) == 1.0);
}

TEST_CASE("expectile loss is convex in the prediction") {
  // Scalar check of |tau - 1{r - q < 0}| (r - q)^2 via midpoints.
  auto loss1d = [](double q, double r, double tau) {
    double u = r - q;
    double w = u < 0.0 ? 1.0 - tau : tau;
    return w * u * u;
  };
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    double r = rng.uniform(-2, 2), tau = rng.uniform(0.05, 0.95);
    double q1 = rng.uniform(-3, 3), q2 = rng.uniform(-3, 3);
    double mid = loss1d(0.5 * (q1 + q2), r, tau);
    double chord = 0.5 * (loss1d(q1, r, tau) + loss1d(q2, r, tau));
    CHECK(mid <= chord + 1e-12);
  }
}

TEST_CASE("expectile loss gradients match finite differences") {
  CriticParams c = init_critic(5, 0, 2, 12, 2);
  Rng rng(7);
  Mat a = box_actions(rng, 32);
  Vec r(32);
  // Keep residuals away from zero so the detached weights cannot flip
  // inside the finite-difference stencil.
  for (int i = 0; i < 32; ++i) r[i] = a(i, 0) + 3.0;

  auto loss_at = [&](const std::vector<double>& flat) {
    CriticParams q = c;
    q.flat = flat;
    return expectile_loss(q, Mat(32, 0), a, r, 0.7).loss;
  };
  auto res = expectile_loss(c, Mat(32, 0), a, r, 0.7);
  Rng pick(11);
  for (int k = 0; k < 20; ++k) {
    size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(c.flat.size())));
    double fd = test_support::central_diff(loss_at, c.flat, idx);
    CHECK(test_support::rel_error(res.grad[idx], fd) < 1e-3);
  }
}

TEST_CASE("tau = 0.5 on a noiseless linear target recovers it") {
  Rng rng(13);
  Mat a = box_actions(rng, 4000);
  Vec r(4000);
  for (int i = 0; i < 4000; ++i) r[i] = 0.8 * a(i, 0) - 0.5 * a(i, 1);

  CriticTrainConfig cfg;
  cfg.tau = 0.5;
  cfg.steps = 4000;
  cfg.lr = 3e-3;
  cfg.width = 32;
  cfg.seed = 17;
  CriticParams critic = train_expectile_critic(Mat(4000, 0), a, r, cfg);

  Rng test_rng(19);
  Mat grid = box_actions(test_rng, 500);
  Vec got = critic_values(critic, Mat(500, 0), grid);
  double mae = 0.0;
  for (int i = 0; i < 500; ++i) mae += std::abs(got[i] - (0.8 * grid(i, 0) - 0.5 * grid(i, 1)));
  mae /= 500;
  CHECK(mae < 0.01);
}

TEST_CASE("constant rewards give a constant critic for any tau") {
  Rng rng(23);
  Mat a = box_actions(rng, 2000);
  Vec r = Vec::Constant(2000, 1.7);
  for (double tau : {0.3, 0.7}) {
    CriticTrainConfig cfg;
    cfg.tau = tau;
    cfg.steps = 2500;
    cfg.lr = 3e-3;
    cfg.width = 24;
    cfg.seed = 29;
    CriticParams critic = train_expectile_critic(Mat(2000, 0), a, r, cfg);
    Rng test_rng(31);
    Mat grid = box_actions(test_rng, 300);
    Vec got = critic_values(critic, Mat(300, 0), grid);
    double mae = (got.array() - 1.7).abs().mean();
    CHECK(mae < 0.01);
  }
}

TEST_CASE("upper expectile dominates the median fit under symmetric noise") {
  Rng rng(37);
  const int n = 4000;
  Mat a = box_actions(rng, n);
  Vec base(n);
  for (int i = 0; i < n; ++i) base[i] = 0.5 * a(i, 0);
  Vec r = base;
  for (int i = 0; i < n; ++i) r[i] += (rng.uniform01() < 0.5 ? -0.5 : 0.5);

  auto fit = [&](double tau) {
    CriticTrainConfig cfg;
    cfg.tau = tau;
    cfg.steps = 3500;
    cfg.lr = 3e-3;
    cfg.width = 24;
    cfg.seed = 41;
    return train_expectile_critic(Mat(n, 0), a, r, cfg);
  };
  CriticParams hi = fit(0.9);
  CriticParams mid = fit(0.5);

  Rng test_rng(43);
  Mat grid = box_actions(test_rng, 400, 1.8);
  Vec qhi = critic_values(hi, Mat(400, 0), grid);
  Vec qmid = critic_values(mid, Mat(400, 0), grid);
  double worst_violation = (qmid - qhi).maxCoeff();
  CHECK(worst_violation < 1e-3);
  // And the gap is the two-point expectile gap c(2 tau - 1) = 0.4, roughly.
  CHECK((qhi - qmid).mean() > 0.2);
}

TEST_CASE("learned critic tracks a known Q within 0.1 MAE") {
  QField field;
  field.kind = QField::Kind::kAngular;
  Rng rng(47);
  const int n = 6000;
  Mat a = box_actions(rng, n);
  Vec r(n);
  for (int i = 0; i < n; ++i) {
    r[i] = true_q(field, {a(i, 0), a(i, 1)}) + 0.1 * rng.normal();
  }
  CriticTrainConfig cfg;
  cfg.tau = 0.5;
  cfg.steps = 5000;
  cfg.lr = 3e-3;
  cfg.width = 48;
  cfg.seed = 53;
  CriticParams critic = train_expectile_critic(Mat(n, 0), a, r, cfg);

  Rng test_rng(59);
  Mat grid = box_actions(test_rng, 500, 1.9);
  Vec got = critic_values(critic, Mat(500, 0), grid);
  double mae = 0.0;
  for (int i = 0; i < 500; ++i) {
    mae += std::abs(got[i] - true_q(field, {grid(i, 0), grid(i, 1)}));
  }
  mae /= 500;
  CHECK(mae < 0.1);
}

TEST_CASE("tau outside (0,1) is a config error") {
  CriticTrainConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS((void)expectile_loss(init_critic(1, 0, 2, 8, 1), Mat(1, 0),
                                       Mat::Zero(1, 2), Vec::Zero(1), 1.2),
                  ConfigError);
}

TEST_CASE("annotation source changes Q columns but never the actions") {
  FieldConfig fc;
  fc.width = 12;
  fc.blocks = 1;
  fc.time_embed_dim = 8;
  ScalarFieldParams phi = init_params(61, fc);
  DiffusionSchedule sch;
  SamplerConfig sampler;

  QFn q1 = [](const Vec&, const Vec& a) { return a[0]; };
  QFn q2 = [](const Vec&, const Vec& a) { return -a.norm(); };
  Rng r1(67), r2(67);
  auto recs1 = build_alignment_dataset(phi, Mat(5, 0), q1, 3, sampler, sch, r1);
  auto recs2 = build_alignment_dataset(phi, Mat(5, 0), q2, 3, sampler, sch, r2);
  REQUIRE(recs1.size() == recs2.size());
  for (size_t i = 0; i < recs1.size(); ++i) {
    CHECK(recs1[i].actions == recs2[i].actions);  // bit-identical candidates
    CHECK(recs1[i].q != recs2[i].q);
  }
}
