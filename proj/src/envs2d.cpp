#include "diffalign/envs2d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "diffalign/csv.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/rng.hpp"

namespace diffalign {

namespace {

constexpr double kBox = 4.0;
constexpr double kEightGaussiansRadius = 2.5;
constexpr double kSwissRollScale = 0.22;
constexpr double kMoonsScale = 2.0;

double clamp_box(double v) { return std::clamp(v, -kBox, kBox); }

Eigen::Vector2d eight_gaussians_center(int k) {
  double angle = k * (M_PI / 4.0);
  return {kEightGaussiansRadius * std::cos(angle), kEightGaussiansRadius * std::sin(angle)};
}

// Spiral point for parameter u in [0, 1].
Eigen::Vector2d swiss_roll_point(double u) {
  double t = 1.5 * M_PI * (1.0 + 2.0 * u);
  return {kSwissRollScale * t * std::cos(t), kSwissRollScale * t * std::sin(t)};
}

// Two interleaved half circles, branch 0/1, parameter u in [0, 1].
// Centered before scaling so the dataset is roughly symmetric in the box.
Eigen::Vector2d moons_point(int branch, double u) {
  double theta = M_PI * u;
  double x, y;
  if (branch == 0) {
    x = std::cos(theta);
    y = std::sin(theta);
  } else {
    x = 1.0 - std::cos(theta);
    y = 0.5 - std::sin(theta);
  }
  return {kMoonsScale * (x - 0.5), kMoonsScale * (y - 0.25)};
}

}  // namespace

Dist2D parse_dist2d(const std::string& name) {
  if (name == "8gaussians") return Dist2D::kEightGaussians;
  if (name == "swissroll") return Dist2D::kSwissRoll;
  if (name == "moons") return Dist2D::kMoons;
  if (name == "gaussian") return Dist2D::kGaussian;
  throw ConfigError("envs2d: unknown distribution '" + name + "'");
}

std::string to_string(Dist2D dist) {
  switch (dist) {
    case Dist2D::kEightGaussians: return "8gaussians";
    case Dist2D::kSwissRoll: return "swissroll";
    case Dist2D::kMoons: return "moons";
    case Dist2D::kGaussian: return "gaussian";
  }
  return "8gaussians";
}

QField::Kind parse_qfield(const std::string& name) {
  if (name == "linear") return QField::Kind::kLinearX;
  if (name == "radial") return QField::Kind::kRadial;
  if (name == "angular") return QField::Kind::kAngular;
  if (name == "radius") return QField::Kind::kRadius;
  throw ConfigError("envs2d: unknown q-field '" + name + "'");
}

std::string to_string(QField::Kind kind) {
  switch (kind) {
    case QField::Kind::kLinearX: return "linear";
    case QField::Kind::kRadial: return "radial";
    case QField::Kind::kAngular: return "angular";
    case QField::Kind::kRadius: return "radius";
  }
  return "angular";
}

QField default_qfield(Dist2D dist) {
  QField f;
  switch (dist) {
    case Dist2D::kEightGaussians: f.kind = QField::Kind::kAngular; break;
    case Dist2D::kSwissRoll: f.kind = QField::Kind::kRadius; break;
    case Dist2D::kMoons: f.kind = QField::Kind::kLinearX; break;
    case Dist2D::kGaussian: f.kind = QField::Kind::kRadial; break;
  }
  return f;
}

double true_q(const QField& field, const Eigen::Vector2d& a) {
  switch (field.kind) {
    case QField::Kind::kLinearX:
      return field.scale * a.x();
    case QField::Kind::kRadial:
      return -field.scale * (a - field.center).norm();
    case QField::Kind::kAngular: {
      double r = a.norm();
      // cos(angle) = x / |a|; zero at the origin where the angle is undefined.
      return r > 1e-12 ? field.scale * a.x() / r : 0.0;
    }
    case QField::Kind::kRadius:
      return field.scale * a.norm();
  }
  return 0.0;
}

BehaviorDataset generate(const Bandit2DSpec& spec) {
  if (spec.count < 0) throw ConfigError("envs2d: count must be >= 0");
  if (spec.noise < 0.0) throw ConfigError("envs2d: noise must be >= 0");
  Rng rng(spec.seed);
  BehaviorDataset ds;
  ds.states.resize(spec.count, 0);
  ds.actions.resize(spec.count, 2);
  for (int i = 0; i < spec.count; ++i) {
    Eigen::Vector2d p;
    switch (spec.dist) {
      case Dist2D::kEightGaussians:
        p = eight_gaussians_center(rng.uniform_int(8));
        p.x() += spec.noise * rng.normal();
        p.y() += spec.noise * rng.normal();
        break;
      case Dist2D::kSwissRoll:
        p = swiss_roll_point(rng.uniform01());
        p.x() += spec.noise * rng.normal();
        p.y() += spec.noise * rng.normal();
        break;
      case Dist2D::kMoons:
        p = moons_point(rng.uniform_int(2), rng.uniform01());
        p.x() += spec.noise * rng.normal();
        p.y() += spec.noise * rng.normal();
        break;
      case Dist2D::kGaussian:
        p = {rng.normal(), rng.normal()};
        break;
    }
    ds.actions(i, 0) = clamp_box(p.x());
    ds.actions(i, 1) = clamp_box(p.y());
  }
  return ds;
}

Eigen::MatrixXd mixture_centers(const Bandit2DSpec& spec, int curve_resolution) {
  switch (spec.dist) {
    case Dist2D::kEightGaussians: {
      Eigen::MatrixXd c(8, 2);
      for (int k = 0; k < 8; ++k) c.row(k) = eight_gaussians_center(k).transpose();
      return c;
    }
    case Dist2D::kGaussian: {
      return Eigen::MatrixXd::Zero(1, 2);
    }
    case Dist2D::kSwissRoll: {
      Eigen::MatrixXd c(curve_resolution, 2);
      for (int i = 0; i < curve_resolution; ++i) {
        double u = (i + 0.5) / curve_resolution;
        c.row(i) = swiss_roll_point(u).transpose();
      }
      return c;
    }
    case Dist2D::kMoons: {
      Eigen::MatrixXd c(2 * curve_resolution, 2);
      for (int i = 0; i < curve_resolution; ++i) {
        double u = (i + 0.5) / curve_resolution;
        c.row(i) = moons_point(0, u).transpose();
        c.row(curve_resolution + i) = moons_point(1, u).transpose();
      }
      return c;
    }
  }
  throw ConfigError("envs2d: unknown distribution");
}

double behavior_density(const Bandit2DSpec& spec, const Eigen::Vector2d& a) {
  double s2;
  Eigen::MatrixXd centers;
  if (spec.dist == Dist2D::kGaussian) {
    s2 = 1.0;
    centers = mixture_centers(spec);
  } else {
    if (!(spec.noise > 0.0)) {
      throw InputError("behavior_density: needs a positive noise scale");
    }
    s2 = spec.noise * spec.noise;
    centers = mixture_centers(spec);
  }
  double norm = 1.0 / (2.0 * M_PI * s2);
  double acc = 0.0;
  for (long i = 0; i < centers.rows(); ++i) {
    double dx = a.x() - centers(i, 0);
    double dy = a.y() - centers(i, 1);
    acc += std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
  }
  return norm * acc / centers.rows();
}

double DensityGrid::cell_area() const {
  double dx = (xmax - xmin) / resolution;
  double dy = (ymax - ymin) / resolution;
  return dx * dy;
}

Eigen::Vector2d DensityGrid::cell_center(int row, int col) const {
  double dx = (xmax - xmin) / resolution;
  double dy = (ymax - ymin) / resolution;
  return {xmin + (col + 0.5) * dx, ymin + (row + 0.5) * dy};
}

DensityGrid density_grid(const Field2D& field, double xmin, double xmax, double ymin, double ymax,
                         int resolution) {
  if (resolution < 2) throw InputError("density_grid: resolution must be >= 2");
  if (!(xmax > xmin) || !(ymax > ymin)) throw InputError("density_grid: inverted ranges");
  DensityGrid g;
  g.xmin = xmin;
  g.xmax = xmax;
  g.ymin = ymin;
  g.ymax = ymax;
  g.resolution = resolution;
  g.values.resize(resolution, resolution);
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      g.values(r, c) = field(g.cell_center(r, c));
    }
  }
  return g;
}

DensityGrid tilted_density_grid(const Bandit2DSpec& spec, double beta, double xmin, double xmax,
                                double ymin, double ymax, int resolution) {
  if (!(beta > 0.0)) throw ConfigError("tilted_density_grid: beta must be positive");
  DensityGrid g = density_grid(
      [&](const Eigen::Vector2d& a) {
        return std::log(behavior_density(spec, a) + 1e-300) + true_q(spec.qfield, a) / beta;
      },
      xmin, xmax, ymin, ymax, resolution);
  // Normalize in log space against the max, then by Riemann sum.
  double m = g.values.maxCoeff();
  g.values = (g.values.array() - m).exp();
  double total = g.values.sum() * g.cell_area();
  g.values /= total;
  return g;
}

Eigen::VectorXd tilted_pmf(const Eigen::VectorXd& mu, const Eigen::VectorXd& q, double beta) {
  if (!(beta > 0.0)) throw ConfigError("tilted_pmf: beta must be positive");
  if (mu.size() != q.size()) throw ShapeError("tilted_pmf: mu and q sizes differ");
  Eigen::VectorXd logw = mu.array().log() + q.array() / beta;
  double m = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - m).exp();
  return w / w.sum();
}

void save_grid_csv(const std::string& path, const DensityGrid& grid) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  out << "# " << csv::format_double(grid.xmin) << ',' << csv::format_double(grid.xmax) << ','
      << csv::format_double(grid.ymin) << ',' << csv::format_double(grid.ymax) << ','
      << grid.resolution << "\n";
  out << "# row i is y = ymin + (i + 0.5) * dy, column j is x = xmin + (j + 0.5) * dx\n";
  for (int r = 0; r < grid.resolution; ++r) {
    for (int c = 0; c < grid.resolution; ++c) {
      if (c) out << ',';
      out << csv::format_double(grid.values(r, c));
    }
    out << "\n";
  }
}

DensityGrid load_grid_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line) || line.size() < 2 || line[0] != '#') {
    throw InputError(path + ": missing grid header");
  }
  auto cells = csv::split(line.substr(2));
  if (cells.size() != 5) throw InputError(path + ": malformed grid header");
  DensityGrid g;
  g.xmin = csv::parse_double(cells[0]);
  g.xmax = csv::parse_double(cells[1]);
  g.ymin = csv::parse_double(cells[2]);
  g.ymax = csv::parse_double(cells[3]);
  g.resolution = static_cast<int>(csv::parse_double(cells[4]));
  g.values.resize(g.resolution, g.resolution);
  int r = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (r >= g.resolution) throw InputError(path + ": too many grid rows");
    auto row = csv::split(line);
    if (static_cast<int>(row.size()) != g.resolution) {
      throw InputError(path + ": wrong grid row length");
    }
    for (int c = 0; c < g.resolution; ++c) g.values(r, c) = csv::parse_double(row[c]);
    ++r;
  }
  if (r != g.resolution) throw InputError(path + ": too few grid rows");
  return g;
}

void save_grid_pgm(const std::string& path, const DensityGrid& grid) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  double lo = grid.values.minCoeff();
  double hi = grid.values.maxCoeff();
  double span = hi - lo;
  out << "P2\n# min-max normalized; top line is y = ymax\n";
  out << grid.resolution << ' ' << grid.resolution << "\n255\n";
  for (int r = grid.resolution - 1; r >= 0; --r) {
    for (int c = 0; c < grid.resolution; ++c) {
      int v = span > 0.0 ? static_cast<int>(std::lround(255.0 * (grid.values(r, c) - lo) / span))
                         : 0;
      out << v << (c + 1 == grid.resolution ? '\n' : ' ');
    }
  }
}

}  // namespace diffalign
