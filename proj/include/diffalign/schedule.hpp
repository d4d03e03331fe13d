#pragma once

#include <Eigen/Core>
#include <utility>

namespace diffalign {

// Variance-preserving forward-diffusion schedule with a linear drift
// coefficient beta(t) = beta_min + t * (beta_max - beta_min) on t in [0, 1].
//
// alpha(t) = exp(-1/2 * integral_0^t beta(u) du) is evaluated in closed form,
// and sigma(t) = sqrt(1 - alpha(t)^2), so alpha^2 + sigma^2 == 1 holds to
// rounding error at every t, alpha(0) == 1 and sigma(0) == 0 exactly.
//
// t_min is the lower clamp for diffusion times drawn during training and for
// score evaluation; the score relation divides by sigma(t), which vanishes
// at t = 0.
struct DiffusionSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_min = 1e-3;

  void validate() const;

  double beta(double t) const { return beta_min + t * (beta_max - beta_min); }

  double integrated_beta(double t) const {
    return beta_min * t + 0.5 * (beta_max - beta_min) * t * t;
  }

  // (alpha_t, sigma_t). Throws InputError if t is outside [0, 1].
  std::pair<double, double> alpha_sigma(double t) const;
};

// Forward perturbation a_t = alpha_t * a + sigma_t * noise. The noise vector
// must match the action dimension (ShapeError otherwise).
Eigen::VectorXd perturb(const DiffusionSchedule& schedule, const Eigen::VectorXd& action,
                        double t, const Eigen::VectorXd& noise);

}  // namespace diffalign
