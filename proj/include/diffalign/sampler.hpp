#pragma once

#include <functional>

#include "diffalign/rng.hpp"
#include "diffalign/scalar_field.hpp"
#include "diffalign/schedule.hpp"

namespace diffalign {

// Deterministic probability-flow integration of the reverse process on a
// uniform time grid from t = 1 down to t = t_min. Heun steps keep the
// discretization error small enough that doubling the step count barely
// moves individual samples, which makes refinement tests cheap.
struct SamplerConfig {
  int steps = 25;

  void validate() const;
};

// Score of the (possibly conditional) distribution at diffusion time t for a
// batch of points, [B, dim] -> [B, dim]. Used to decouple the integrator from
// the neural field so exact analytic scores can drive it in tests.
using ScoreFn = std::function<Mat(const Mat& points, double t)>;

// Integrates n rows starting from N(0, I) noise drawn from `rng`. Returns the
// actions at t_min. Throws SamplerError (reporting the step) if the state
// goes non-finite.
Mat sample_batch_with_score(const ScoreFn& score, int n, int dim, const SamplerConfig& config,
                            const DiffusionSchedule& schedule, Rng& rng);

// Draws actions from a trained field for a batch of states ([n, state_dim]).
Mat sample_batch(const ScalarFieldParams& params, const Mat& states, const SamplerConfig& config,
                 const DiffusionSchedule& schedule, Rng& rng);

Vec sample_action(const ScalarFieldParams& params, const Vec& state, const SamplerConfig& config,
                  const DiffusionSchedule& schedule, Rng& rng);

using QFn = std::function<double(const Vec& state, const Vec& action)>;

// Best-of-n evaluation-time rejection sampling: draws n_candidates actions
// and keeps the one with the highest q value; ties break to the lowest
// candidate index. n_candidates = 1 consumes the rng exactly like
// sample_action.
Vec rejection_sample(const ScalarFieldParams& params, const Vec& state, const QFn& q,
                     int n_candidates, const SamplerConfig& config,
                     const DiffusionSchedule& schedule, Rng& rng);

}  // namespace diffalign
