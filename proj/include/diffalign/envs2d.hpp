#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>

#include "diffalign/dataset.hpp"

namespace diffalign {

// 2D bandit data generators and ground-truth machinery. All actions live in
// the canonical box [-4, 4]^2; generated points are clamped to it.

enum class Dist2D { kEightGaussians, kSwissRoll, kMoons, kGaussian };

Dist2D parse_dist2d(const std::string& name);
std::string to_string(Dist2D dist);

// Analytic Q-fields over the action plane. The toy tasks pair each
// distribution with a smooth field that discriminates its modes:
// eight gaussians -> angular (favors right-side modes), swiss roll ->
// radius (grows along the spiral), moons -> linear in x.
struct QField {
  enum class Kind { kLinearX, kRadial, kAngular, kRadius };
  Kind kind = Kind::kAngular;
  Eigen::Vector2d center{0.0, 0.0};  // used by kRadial
  double scale = 1.0;
};

QField::Kind parse_qfield(const std::string& name);
std::string to_string(QField::Kind kind);
QField default_qfield(Dist2D dist);

double true_q(const QField& field, const Eigen::Vector2d& a);

struct Bandit2DSpec {
  Dist2D dist = Dist2D::kEightGaussians;
  int count = 50000;
  double noise = 0.2;
  QField qfield;
  std::uint64_t seed = 1;
};

// Deterministic given the seed; states are empty (stateless bandit).
BehaviorDataset generate(const Bandit2DSpec& spec);

// Mixture representation of the behavior density: kernel centers along the
// generator's support plus the isotropic noise scale. Exact for the discrete
// mixtures, a fine quadrature of the curve for swiss roll and moons.
Eigen::MatrixXd mixture_centers(const Bandit2DSpec& spec, int curve_resolution = 4096);

double behavior_density(const Bandit2DSpec& spec, const Eigen::Vector2d& a);

// Rectangular grid of field values at cell centers. Row i corresponds to
// y = ymin + (i + 0.5) * dy, column j to x = xmin + (j + 0.5) * dx.
struct DensityGrid {
  double xmin = -4.0, xmax = 4.0, ymin = -4.0, ymax = 4.0;
  int resolution = 64;
  Eigen::MatrixXd values;  // [resolution, resolution]

  double cell_area() const;
  Eigen::Vector2d cell_center(int row, int col) const;
};

using Field2D = std::function<double(const Eigen::Vector2d&)>;

DensityGrid density_grid(const Field2D& field, double xmin, double xmax, double ymin, double ymax,
                         int resolution);

// Behavior density tilted by exp(Q / beta) and normalized over the grid by
// Riemann sum, so values * cell_area sum to one.
DensityGrid tilted_density_grid(const Bandit2DSpec& spec, double beta, double xmin, double xmax,
                                double ymin, double ymax, int resolution);

// Discrete counterpart used on finite action sets: p_i proportional to
// mu_i * exp(q_i / beta).
Eigen::VectorXd tilted_pmf(const Eigen::VectorXd& mu, const Eigen::VectorXd& q, double beta);

// CSV: "# xmin,xmax,ymin,ymax,R" comment then R rows of R values (row-major,
// row 0 at ymin). PGM: 8-bit grayscale, min-max normalized, top line at ymax.
void save_grid_csv(const std::string& path, const DensityGrid& grid);
DensityGrid load_grid_csv(const std::string& path);
void save_grid_pgm(const std::string& path, const DensityGrid& grid);

}  // namespace diffalign
