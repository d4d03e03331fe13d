#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "diffalign/envs2d.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/oracle.hpp"

using namespace diffalign;

namespace {

// Radius-linked connected components (union-find).
int component_count(const Eigen::MatrixXd& pts, double eps) {
  int n = static_cast<int>(pts.rows());
  std::vector<int> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if ((pts.row(i) - pts.row(j)).norm() <= eps) {
        parent[static_cast<size_t>(find(i))] = find(j);
      }
    }
  }
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (find(i) == i) ++count;
  }
  return count;
}

}  // namespace

TEST_CASE("eight gaussians: every mode claims its share") {
  Bandit2DSpec spec;
  spec.count = 10000;
  spec.seed = 5;
  BehaviorDataset ds = generate(spec);
  REQUIRE(ds.size() == 10000);

  Eigen::MatrixXd centers = mixture_centers(spec);
  std::vector<int> claimed(8, 0);
  for (long i = 0; i < ds.size(); ++i) {
    int best = 0;
    double bd = 1e18;
    for (int k = 0; k < 8; ++k) {
      double d = (ds.actions.row(i) - centers.row(k)).norm();
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    ++claimed[static_cast<size_t>(best)];
  }
  for (int k = 0; k < 8; ++k) {
    double share = claimed[static_cast<size_t>(k)] / 10000.0;
    CHECK(share > 0.08);
    CHECK(share < 0.17);
  }
}

TEST_CASE("all generators stay in the canonical box") {
  for (Dist2D dist : {Dist2D::kEightGaussians, Dist2D::kSwissRoll, Dist2D::kMoons,
                      Dist2D::kGaussian}) {
    Bandit2DSpec spec;
    spec.dist = dist;
    spec.count = 10000;
    spec.seed = 11;
    BehaviorDataset ds = generate(spec);
    CHECK(ds.actions.cwiseAbs().maxCoeff() <= 4.0);
    CHECK(ds.state_dim() == 0);
  }
}

TEST_CASE("moons form exactly two radius-linked clusters") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Bandit2DSpec spec;
    spec.dist = Dist2D::kMoons;
    spec.count = 1000;
    spec.noise = 0.1;
    spec.seed = seed;
    BehaviorDataset ds = generate(spec);
    CHECK(component_count(ds.actions, 0.3) == 2);
  }
}

TEST_CASE("empty generation keeps valid metadata") {
  Bandit2DSpec spec;
  spec.count = 0;
  BehaviorDataset ds = generate(spec);
  CHECK(ds.size() == 0);
  CHECK(ds.action_dim() == 2);
  CHECK(ds.state_dim() == 0);
}

TEST_CASE("generation is deterministic in the seed") {
  Bandit2DSpec spec;
  spec.count = 500;
  spec.seed = 77;
  BehaviorDataset a = generate(spec);
  BehaviorDataset b = generate(spec);
  CHECK(a.actions == b.actions);
  spec.seed = 78;
  BehaviorDataset c = generate(spec);
  CHECK(a.actions != c.actions);
}

TEST_CASE("behavior csv round-trips the generated data") {
  Bandit2DSpec spec;
  spec.count = 50;
  spec.seed = 3;
  BehaviorDataset ds = generate(spec);
  save_behavior_csv("/tmp/diffalign_test_behavior.csv", ds);
  BehaviorDataset back = load_behavior_csv("/tmp/diffalign_test_behavior.csv");
  REQUIRE(back.size() == ds.size());
  CHECK((back.actions - ds.actions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("q fields evaluate as defined") {
  QField linear{QField::Kind::kLinearX, {0, 0}, 1.0};
  CHECK(true_q(linear, {1.0, -2.0}) == 1.0);
  QField radius{QField::Kind::kRadius, {0, 0}, 1.0};
  CHECK(true_q(radius, {3.0, 4.0}) == 5.0);
  QField angular{QField::Kind::kAngular, {0, 0}, 1.0};
  CHECK(true_q(angular, {2.0, 0.0}) == doctest::Approx(1.0));
  CHECK(true_q(angular, {-2.0, 0.0}) == doctest::Approx(-1.0));
  CHECK(true_q(angular, {0.0, 3.0}) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(default_qfield(Dist2D::kEightGaussians).kind == QField::Kind::kAngular);
  CHECK(default_qfield(Dist2D::kSwissRoll).kind == QField::Kind::kRadius);
  CHECK(default_qfield(Dist2D::kMoons).kind == QField::Kind::kLinearX);
}

TEST_CASE("density grid evaluates cell centers") {
  DensityGrid flat = density_grid([](const Eigen::Vector2d&) { return 3.5; }, -4, 4, -4, 4, 16);
  CHECK(flat.values.minCoeff() == 3.5);
  CHECK(flat.values.maxCoeff() == 3.5);

  // Standard Gaussian log-density peaks at the central cells.
  DensityGrid g = density_grid(
      [](const Eigen::Vector2d& a) { return -0.5 * a.squaredNorm(); }, -4, 4, -4, 4, 65);
  int rbest = 0, cbest = 0;
  g.values.maxCoeff(&rbest, &cbest);
  CHECK(g.cell_center(rbest, cbest).norm() < 0.07);

  // The linear field grows along columns (left to right).
  DensityGrid lin = density_grid([](const Eigen::Vector2d& a) { return a.x(); }, -4, 4, -4, 4, 9);
  for (int r = 0; r < 9; ++r) {
    for (int c = 1; c < 9; ++c) {
      CHECK(lin.values(r, c) > lin.values(r, c - 1));
    }
  }

  CHECK_THROWS_AS((void)density_grid([](const Eigen::Vector2d&) { return 0.0; }, 4, -4, -4, 4, 8),
                  InputError);
  CHECK_THROWS_AS((void)density_grid([](const Eigen::Vector2d&) { return 0.0; }, -4, 4, -4, 4, 1),
                  InputError);
}

TEST_CASE("grid csv and pgm exports") {
  DensityGrid g = density_grid(
      [](const Eigen::Vector2d& a) { return a.x() + 2.0 * a.y(); }, -4, 4, -4, 4, 8);
  save_grid_csv("/tmp/diffalign_test_grid.csv", g);
  DensityGrid back = load_grid_csv("/tmp/diffalign_test_grid.csv");
  CHECK(back.resolution == 8);
  CHECK((back.values - g.values).cwiseAbs().maxCoeff() == 0.0);

  save_grid_pgm("/tmp/diffalign_test_grid.pgm", g);
  std::ifstream pgm("/tmp/diffalign_test_grid.pgm");
  std::string magic;
  pgm >> magic;
  CHECK(magic == "P2");
}

TEST_CASE("behavior density integrates to one over the box") {
  Bandit2DSpec spec;
  spec.noise = 0.2;
  DensityGrid g = density_grid(
      [&](const Eigen::Vector2d& a) { return behavior_density(spec, a); }, -4, 4, -4, 4, 160);
  CHECK(g.values.sum() * g.cell_area() == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("tilting by zero Q leaves the normalized behavior density") {
  Bandit2DSpec spec;
  spec.qfield.kind = QField::Kind::kLinearX;
  spec.qfield.scale = 0.0;  // Q identically zero
  DensityGrid tilted = tilted_density_grid(spec, 1.0, -4, 4, -4, 4, 64);
  DensityGrid base = density_grid(
      [&](const Eigen::Vector2d& a) { return behavior_density(spec, a); }, -4, 4, -4, 4, 64);
  double total = base.values.sum() * base.cell_area();
  base.values /= total;
  CHECK((tilted.values - base.values).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("huge beta recovers the behavior density in TV") {
  Bandit2DSpec spec;  // angular Q by default
  DensityGrid tilted = tilted_density_grid(spec, 1e6, -4, 4, -4, 4, 64);
  DensityGrid base = density_grid(
      [&](const Eigen::Vector2d& a) { return behavior_density(spec, a); }, -4, 4, -4, 4, 64);
  double total = base.values.sum() * base.cell_area();
  base.values /= total;
  double tv = 0.5 * (tilted.values - base.values).cwiseAbs().sum() * base.cell_area();
  CHECK(tv < 1e-3);
}

TEST_CASE("tilted pmf matches the independent oracle route and frozen values") {
  Eigen::VectorXd mu(3), q(3);
  mu << 0.5, 0.3, 0.2;
  q << 0.0, 1.0, 2.0;
  Eigen::VectorXd p = tilted_pmf(mu, q, 1.0);
  CHECK(p[0] == doctest::Approx(0.17900).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.29194).epsilon(1e-4));
  CHECK(p[2] == doctest::Approx(0.52906).epsilon(1e-4));

  auto inst = oracle::default_instance();
  Eigen::VectorXd via_oracle = oracle::exact_target(inst);
  CHECK((p - via_oracle).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS((void)tilted_pmf(mu, q, 0.0), ConfigError);
}

TEST_CASE("tilting shifts mass toward high-Q actions") {
  // Mean Q under the tilted density exceeds the behavior mean, and the
  // effect strengthens as beta shrinks.
  Bandit2DSpec spec;  // 8gaussians with angular Q
  auto mean_q = [&](const DensityGrid& g) {
    double acc = 0.0;
    for (int r = 0; r < g.resolution; ++r) {
      for (int c = 0; c < g.resolution; ++c) {
        acc += g.values(r, c) * true_q(spec.qfield, g.cell_center(r, c));
      }
    }
    return acc * g.cell_area();
  };
  DensityGrid base = density_grid(
      [&](const Eigen::Vector2d& a) { return behavior_density(spec, a); }, -4, 4, -4, 4, 64);
  double total = base.values.sum() * base.cell_area();
  base.values /= total;

  double behavior_mean = mean_q(base);
  double tilted_03 = mean_q(tilted_density_grid(spec, 0.3, -4, 4, -4, 4, 64));
  double tilted_10 = mean_q(tilted_density_grid(spec, 1.0, -4, 4, -4, 4, 64));
  CHECK(tilted_03 > tilted_10);
  CHECK(tilted_10 > behavior_mean);
}

TEST_CASE("unknown tags are config errors") {
  CHECK_THROWS_AS((void)parse_dist2d("spiral"), ConfigError);
  CHECK_THROWS_AS((void)parse_qfield("bogus"), ConfigError);
  Bandit2DSpec spec;
  spec.count = -1;
  CHECK_THROWS_AS((void)generate(spec), ConfigError);
}
