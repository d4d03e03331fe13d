#include "diffalign/schedule.hpp"

#include <cmath>

#include "diffalign/errors.hpp"

namespace diffalign {

void DiffusionSchedule::validate() const {
  if (!(beta_min > 0.0) || !(beta_max > 0.0)) {
    throw ConfigError("schedule: beta_min and beta_max must be positive");
  }
  if (!(beta_max >= beta_min)) {
    throw ConfigError("schedule: beta_max must be >= beta_min");
  }
  if (!(t_min > 0.0) || !(t_min < 1.0)) {
    throw ConfigError("schedule: t_min must lie in (0, 1)");
  }
}

std::pair<double, double> DiffusionSchedule::alpha_sigma(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw InputError("diffusion time outside [0, 1]: t = " + std::to_string(t));
  }
  double alpha = std::exp(-0.5 * integrated_beta(t));
  double sigma = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
  return {alpha, sigma};
}

Eigen::VectorXd perturb(const DiffusionSchedule& schedule, const Eigen::VectorXd& action,
                        double t, const Eigen::VectorXd& noise) {
  if (noise.size() != action.size()) {
    throw ShapeError("perturb: noise dimension " + std::to_string(noise.size()) +
                     " does not match action dimension " + std::to_string(action.size()));
  }
  auto [alpha, sigma] = schedule.alpha_sigma(t);
  return alpha * action + sigma * noise;
}

}  // namespace diffalign
