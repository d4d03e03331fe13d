#include "diffalign/sampler.hpp"

#include <cmath>

#include "diffalign/errors.hpp"

namespace diffalign {

void SamplerConfig::validate() const {
  if (steps < 2) throw ConfigError("sampler: steps must be >= 2");
}

Mat sample_batch_with_score(const ScoreFn& score, int n, int dim, const SamplerConfig& config,
                            const DiffusionSchedule& schedule, Rng& rng) {
  config.validate();
  schedule.validate();
  if (n < 0 || dim < 1) throw InputError("sampler: bad batch shape");

  Mat a(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
  }
  if (n == 0) return a;

  // Probability-flow drift: da/dt = -1/2 beta(t) (a + score(a, t)).
  auto drift = [&](const Mat& x, double t) -> Mat {
    return -0.5 * schedule.beta(t) * (x + score(x, t));
  };

  const double dt = (schedule.t_min - 1.0) / config.steps;
  double t = 1.0;
  for (int step = 0; step < config.steps; ++step) {
    double t_next = (step + 1 == config.steps) ? schedule.t_min : 1.0 + dt * (step + 1);
    double h = t_next - t;
    Mat k1 = drift(a, t);
    Mat k2 = drift(a + h * k1, t_next);
    a += 0.5 * h * (k1 + k2);
    if (!a.allFinite()) {
      throw SamplerError("sampler: non-finite state", step);
    }
    t = t_next;
  }
  return a;
}

Mat sample_batch(const ScalarFieldParams& params, const Mat& states, const SamplerConfig& config,
                 const DiffusionSchedule& schedule, Rng& rng) {
  const int n = static_cast<int>(states.rows());
  ScoreFn score = [&](const Mat& points, double t) {
    Vec tv = Vec::Constant(points.rows(), t);
    return field_scores(params, points, states, tv, schedule);
  };
  return sample_batch_with_score(score, n, params.config.action_dim, config, schedule, rng);
}

Vec sample_action(const ScalarFieldParams& params, const Vec& state, const SamplerConfig& config,
                  const DiffusionSchedule& schedule, Rng& rng) {
  Mat states = state.transpose();
  return sample_batch(params, states, config, schedule, rng).row(0);
}

Vec rejection_sample(const ScalarFieldParams& params, const Vec& state, const QFn& q,
                     int n_candidates, const SamplerConfig& config,
                     const DiffusionSchedule& schedule, Rng& rng) {
  if (n_candidates < 1) throw InputError("rejection_sample: n_candidates must be >= 1");
  Vec best;
  double best_q = 0.0;
  for (int c = 0; c < n_candidates; ++c) {
    Vec a = sample_action(params, state, config, schedule, rng);
    double v = q(state, a);
    if (c == 0 || v > best_q) {
      best = a;
      best_q = v;
    }
  }
  return best;
}

}  // namespace diffalign
