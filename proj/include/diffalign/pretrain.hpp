#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "diffalign/dataset.hpp"
#include "diffalign/rng.hpp"
#include "diffalign/scalar_field.hpp"
#include "diffalign/schedule.hpp"

namespace diffalign {

struct TrainConfig {
  int steps = 100000;
  int batch = 256;
  double lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

// Score-matching loss for one minibatch:
//
//   mean_i || sigma_{t_i} * grad_a f(a_{t_i} | s_i, t_i) + eps_i ||^2
//
// with per-sample t_i ~ U[t_min, 1] and eps_i ~ N(0, I) drawn from `rng`,
// and a_{t_i} the forward perturbation of the clean action. The returned
// gradients are exact reverse-mode derivatives of the minibatch loss,
// including the double-backpropagation through the input gradient.
LossResult noise_prediction_loss(const ScalarFieldParams& params, const Mat& states,
                                 const Mat& actions, const DiffusionSchedule& schedule, Rng& rng,
                                 bool use_dropout = false);

using MetricsSink = std::function<void(long step, double loss)>;

// Behavior pretraining: Adam on the score-matching loss. Deterministic given
// config.seed. Throws TrainingError naming the step if the loss goes
// non-finite.
ScalarFieldParams pretrain_run(const BehaviorDataset& dataset, const TrainConfig& config,
                               const DiffusionSchedule& schedule, const FieldConfig& field,
                               const MetricsSink& sink = nullptr);

}  // namespace diffalign
