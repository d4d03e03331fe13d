#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diffalign/alignment.hpp"
#include "diffalign/errors.hpp"
#include "test_support.hpp"

using namespace diffalign;

namespace {

FieldConfig tiny_config() {
  FieldConfig cfg;
  cfg.action_dim = 2;
  cfg.time_embed_dim = 8;
  cfg.width = 12;
  cfg.blocks = 1;
  return cfg;
}

AlignmentRecord random_record(Rng& rng, int k) {
  AlignmentRecord rec;
  rec.state = Vec(0);
  rec.actions = Mat(k, 2);
  rec.q = Vec(k);
  for (int i = 0; i < k; ++i) {
    rec.actions(i, 0) = rng.normal();
    rec.actions(i, 1) = rng.normal();
    rec.q[i] = rng.normal();
  }
  return rec;
}

// Re-derives the noisy actions the loss draws from `seed` (one t per record,
// then K x dim noises in row order), so closed-form expectations can be
// checked against the implementation.
struct ReplayedNoise {
  double t;
  Mat noisy;
};

ReplayedNoise replay_noise(const AlignmentRecord& rec, const DiffusionSchedule& sch,
                           std::uint64_t seed) {
  Rng rng(seed);
  ReplayedNoise out;
  out.t = rng.uniform(sch.t_min, 1.0);
  auto [alpha, sigma] = sch.alpha_sigma(out.t);
  out.noisy = Mat(rec.candidates(), rec.actions.cols());
  for (int k = 0; k < rec.candidates(); ++k) {
    for (int j = 0; j < rec.actions.cols(); ++j) {
      out.noisy(k, j) = alpha * rec.actions(k, j) + sigma * rng.normal();
    }
  }
  return out;
}

}  // namespace

TEST_CASE("optimality probability: symmetry, known values, stability") {
  Vec q4 = Vec::Constant(4, 1.0);
  Vec p4 = optimality_probability(q4);
  for (int i = 0; i < 4; ++i) CHECK(p4[i] == doctest::Approx(0.25).epsilon(1e-14));

  Vec q2(2);
  q2 << 0.0, std::log(2.0);
  Vec p2 = optimality_probability(q2);
  CHECK(p2[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(p2[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  Vec q3(3);
  q3 << 0.0, 1.0, 2.0;
  Vec p3 = optimality_probability(q3);
  CHECK(p3[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p3[1] == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(p3[2] == doctest::Approx(0.66524095577482186).epsilon(1e-12));

  // Huge values survive thanks to max subtraction.
  Vec big(3);
  big << 1000.0, 1001.0, 999.0;
  Vec pb = optimality_probability(big);
  CHECK(std::abs(pb.sum() - 1.0) < 1e-12);

  Vec bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS((void)optimality_probability(bad), InputError);
}

TEST_CASE("theta == phi gives uniform predictions and loss log K") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(3, cfg);
  ScalarFieldParams theta = phi;
  DiffusionSchedule sch;
  Rng data_rng(5);
  for (int k : {2, 4, 16}) {
    std::vector<AlignmentRecord> recs = {random_record(data_rng, k)};
    Rng rng(7);
    auto r = value_alignment_loss(theta, phi, recs, 0.3, sch, rng);
    CHECK(r.loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-13));
    CHECK(r.mean_implied_q == doctest::Approx(0.0).epsilon(1e-14));
    Rng rng2(7);
    auto rp = preference_alignment_loss(theta, phi, recs, 0.3, sch, rng2);
    CHECK(rp.loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-13));
  }
}

TEST_CASE("per-record constant added to Q leaves the value loss unchanged") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(11, cfg);
  ScalarFieldParams theta = init_params(12, cfg);
  DiffusionSchedule sch;
  Rng data_rng(13);
  std::vector<AlignmentRecord> recs = {random_record(data_rng, 8), random_record(data_rng, 8)};

  Rng r1(99);
  double base = value_alignment_loss(theta, phi, recs, 0.7, sch, r1).loss;
  for (auto& rec : recs) rec.q.array() += 123.456;
  Rng r2(99);
  double shifted = value_alignment_loss(theta, phi, recs, 0.7, sch, r2).loss;
  CHECK(std::abs(base - shifted) < 1e-10);
}

TEST_CASE("per-(s,t) constant added to f_theta leaves both losses unchanged") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(21, cfg);
  ScalarFieldParams theta = init_params(22, cfg);
  DiffusionSchedule sch;
  Rng data_rng(23);
  std::vector<AlignmentRecord> recs = {random_record(data_rng, 5)};

  Rng r1(7);
  double base = value_alignment_loss(theta, phi, recs, 0.5, sch, r1).loss;
  // The output bias shifts f by the same constant everywhere, which is one
  // realizable c(s, t).
  ScalarFieldParams shifted = theta;
  shifted.flat.back() += 42.0;
  Rng r2(7);
  double moved = value_alignment_loss(shifted, phi, recs, 0.5, sch, r2).loss;
  CHECK(std::abs(base - moved) < 1e-10);

  Rng r3(7);
  double pref_base = preference_alignment_loss(theta, phi, recs, 0.5, sch, r3).loss;
  Rng r4(7);
  double pref_moved = preference_alignment_loss(shifted, phi, recs, 0.5, sch, r4).loss;
  CHECK(std::abs(pref_base - pref_moved) < 1e-10);
}

TEST_CASE("value loss is bounded below by the target entropy") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(31, cfg);
  ScalarFieldParams theta = init_params(32, cfg);
  DiffusionSchedule sch;
  Rng data_rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AlignmentRecord> recs = {random_record(data_rng, 6)};
    Vec p = optimality_probability(recs[0].q);
    double entropy = 0.0;
    for (int i = 0; i < p.size(); ++i) entropy -= p[i] * std::log(p[i]);
    Rng rng(trial);
    double loss = value_alignment_loss(theta, phi, recs, 0.4, sch, rng).loss;
    CHECK(loss >= entropy - 1e-12);
  }
}

TEST_CASE("preference loss at K = 2 is the pairwise logistic loss") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(41, cfg);
  ScalarFieldParams theta = init_params(42, cfg);
  DiffusionSchedule sch;
  Rng data_rng(43);
  const double beta = 0.8;
  for (int trial = 0; trial < 100; ++trial) {
    AlignmentRecord rec = random_record(data_rng, 2);
    std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
    Rng rng(seed);
    double loss = preference_alignment_loss(theta, phi, {rec}, beta, sch, rng).loss;

    ReplayedNoise rn = replay_noise(rec, sch, seed);
    Vec t2 = Vec::Constant(2, rn.t);
    Vec ft = field_values(theta, rn.noisy, Mat(2, 0), t2);
    Vec fp = field_values(phi, rn.noisy, Mat(2, 0), t2);
    int w = rec.q[0] >= rec.q[1] ? 0 : 1;
    int l = 1 - w;
    double margin = beta * (ft[w] - fp[w]) - beta * (ft[l] - fp[l]);
    double expected = -std::log(1.0 / (1.0 + std::exp(-margin)));
    CHECK(std::abs(loss - expected) < 1e-10);
  }
}

TEST_CASE("one-hot target matches the value loss for extreme Q gaps") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(51, cfg);
  ScalarFieldParams theta = init_params(52, cfg);
  DiffusionSchedule sch;
  Rng data_rng(53);
  AlignmentRecord rec = random_record(data_rng, 2);
  rec.q << 0.0, 100.0;  // softmax(Q) is one-hot to machine precision
  Rng r1(5);
  double value = value_alignment_loss(theta, phi, {rec}, 0.3, sch, r1).loss;
  Rng r2(5);
  double pref = preference_alignment_loss(theta, phi, {rec}, 0.3, sch, r2).loss;
  CHECK(std::abs(value - pref) < 1e-6);
}

TEST_CASE("value loss parameter gradients match finite differences") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(61, cfg);
  ScalarFieldParams theta = init_params(62, cfg);
  DiffusionSchedule sch;
  Rng data_rng(63);
  std::vector<AlignmentRecord> recs = {random_record(data_rng, 4), random_record(data_rng, 4)};

  auto loss_at = [&](const std::vector<double>& flat) {
    ScalarFieldParams q = theta;
    q.flat = flat;
    Rng rng(777);
    return value_alignment_loss(q, phi, recs, 0.6, sch, rng).loss;
  };
  Rng rng(777);
  auto r = value_alignment_loss(theta, phi, recs, 0.6, sch, rng);
  Rng pick(3);
  for (int k = 0; k < 20; ++k) {
    size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(theta.flat.size())));
    double fd = test_support::central_diff(loss_at, theta.flat, idx);
    CHECK(test_support::rel_error(r.grad[idx], fd) < 1e-3);
  }
}

TEST_CASE("preference loss parameter gradients match finite differences") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(71, cfg);
  ScalarFieldParams theta = init_params(72, cfg);
  DiffusionSchedule sch;
  Rng data_rng(73);
  std::vector<AlignmentRecord> recs = {random_record(data_rng, 4)};

  auto loss_at = [&](const std::vector<double>& flat) {
    ScalarFieldParams q = theta;
    q.flat = flat;
    Rng rng(888);
    return preference_alignment_loss(q, phi, recs, 0.6, sch, rng).loss;
  };
  Rng rng(888);
  auto r = preference_alignment_loss(theta, phi, recs, 0.6, sch, rng);
  Rng pick(5);
  for (int k = 0; k < 20; ++k) {
    size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(theta.flat.size())));
    double fd = test_support::central_diff(loss_at, theta.flat, idx);
    CHECK(test_support::rel_error(r.grad[idx], fd) < 1e-3);
  }
}

TEST_CASE("finetune: zero steps copies phi bit-exactly; phi never changes") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(81, cfg);
  std::vector<double> phi_bytes = phi.flat;
  DiffusionSchedule sch;
  Rng data_rng(83);
  std::vector<AlignmentRecord> recs;
  for (int i = 0; i < 6; ++i) recs.push_back(random_record(data_rng, 4));

  AlignConfig align;
  align.K = 4;
  align.steps = 0;
  ScalarFieldParams theta0 = finetune_run(phi, recs, align, sch);
  CHECK(theta0.flat == phi.flat);

  align.steps = 25;
  align.lr = 1e-3;
  align.batch = 3;
  ScalarFieldParams theta = finetune_run(phi, recs, align, sch);
  CHECK(theta.flat != phi.flat);
  CHECK(phi.flat == phi_bytes);

  // Deterministic rerun.
  ScalarFieldParams theta2 = finetune_run(phi, recs, align, sch);
  CHECK(theta.flat == theta2.flat);

  // Dropout is forced off in the fine-tuned parameters.
  ScalarFieldParams phi_dropout = phi;
  phi_dropout.config.dropout = 0.3;
  ScalarFieldParams theta3 = finetune_run(phi_dropout, recs, align, sch);
  CHECK(theta3.config.dropout == 0.0);
}

TEST_CASE("build_alignment_dataset stores K unbiased candidates with Q labels") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(91, cfg);
  DiffusionSchedule sch;
  SamplerConfig sampler;

  // Shape and trivial annotation.
  Rng r1(3);
  auto recs = build_alignment_dataset(
      phi, Mat(1, 0), [](const Vec&, const Vec&) { return 0.0; }, 2, sampler, sch, r1);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].candidates() == 2);
  CHECK(recs[0].q[0] == 0.0);
  CHECK(recs[0].q[1] == 0.0);

  // Stored actions follow the behavior sampler regardless of annotation.
  QFn radial = [](const Vec&, const Vec& a) { return -a.norm(); };
  Rng r2(5);
  auto annotated = build_alignment_dataset(phi, Mat(150, 0), radial, 4, sampler, sch, r2);
  std::vector<double> stored;
  for (const auto& rec : annotated) {
    for (int k = 0; k < rec.candidates(); ++k) stored.push_back(rec.actions(k, 0));
  }
  Rng r3(6);
  Mat direct = sample_batch(phi, Mat(600, 0), sampler, sch, r3);
  std::vector<double> reference(direct.col(0).data(), direct.col(0).data() + 600);
  CHECK(test_support::ks_two_sample_p(stored, reference) > 0.01);
}

TEST_CASE("config and record validation") {
  AlignConfig c;
  c.mode = AlignMode::kDpo;
  c.K = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.K = 2;
  CHECK_NOTHROW(c.validate());
  c = AlignConfig{};
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  AlignmentRecord rec;
  rec.state = Vec(0);
  rec.actions = Mat(1, 2);
  rec.actions.setZero();
  rec.q = Vec(1);
  rec.q.setZero();
  CHECK_THROWS_AS(rec.validate(), InputError);

  CHECK(parse_align_mode("dpo") == AlignMode::kDpo);
  CHECK_THROWS_AS((void)parse_align_mode("nope"), ConfigError);
}

TEST_CASE("implied q is zero when theta equals phi") {
  FieldConfig cfg = tiny_config();
  ScalarFieldParams phi = init_params(95, cfg);
  Vec a(2);
  a << 0.4, -0.2;
  CHECK(implied_q(phi, phi, Vec(0), a, 0.3, 0.7) == 0.0);
}

TEST_CASE("alignment csv round-trips") {
  Rng rng(97);
  std::vector<AlignmentRecord> recs;
  for (int i = 0; i < 3; ++i) recs.push_back(random_record(rng, 4));
  std::string path = "/tmp/diffalign_test_alignment.csv";
  save_alignment_csv(path, recs);
  auto loaded = load_alignment_csv(path);
  REQUIRE(loaded.size() == recs.size());
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(loaded[i].actions == recs[i].actions);
    CHECK(loaded[i].q == recs[i].q);
  }
}
