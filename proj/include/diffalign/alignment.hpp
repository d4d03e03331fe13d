#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffalign/rng.hpp"
#include "diffalign/sampler.hpp"
#include "diffalign/scalar_field.hpp"
#include "diffalign/schedule.hpp"

namespace diffalign {

// One state with K candidate actions drawn from the behavior policy and
// their K annotated Q-values.
struct AlignmentRecord {
  Vec state;    // [state_dim], possibly empty
  Mat actions;  // [K, action_dim]
  Vec q;        // [K]

  int candidates() const { return static_cast<int>(actions.rows()); }
  void validate() const;
};

enum class AlignMode { kValue, kPreference, kDpo };

AlignMode parse_align_mode(const std::string& name);
std::string to_string(AlignMode mode);

struct AlignConfig {
  double beta = 0.3;  // tilt temperature; sweepable
  int K = 16;
  AlignMode mode = AlignMode::kValue;
  double lr = 5e-5;
  int steps = 20000;
  int batch = 32;  // records per gradient step
  std::uint64_t seed = 1;

  void validate() const;  // mode == kDpo forces K == 2
};

// For each state, K independent behavior samples annotated after the fact by
// `q`; the annotation cannot influence which actions are stored. The original
// dataset action for the state is not kept.
std::vector<AlignmentRecord> build_alignment_dataset(const ScalarFieldParams& behavior,
                                                     const Mat& states, const QFn& q, int K,
                                                     const SamplerConfig& sampler_config,
                                                     const DiffusionSchedule& schedule, Rng& rng);

// softmax(q) with max subtraction; the optimality distribution over K
// candidates. Sums to one within 1e-12.
Vec optimality_probability(const Vec& q);

struct AlignLossResult {
  double loss = 0.0;
  std::vector<double> grad;      // d loss / d theta
  double mean_implied_q = 0.0;   // mean of beta * (f_theta - f_phi) over the noisy actions
};

// Cross-entropy between softmax(Q) and the predicted optimality
// softmax(beta * [f_theta - f_phi]) evaluated on K noisy actions at one
// shared random t per record. Gradients flow only into theta; the behavior
// parameters enter as constants. Dropout is never applied here.
AlignLossResult value_alignment_loss(const ScalarFieldParams& theta, const ScalarFieldParams& phi,
                                     const std::vector<AlignmentRecord>& records, double beta,
                                     const DiffusionSchedule& schedule, Rng& rng);

// Same prediction, but the target is one-hot at the argmax-Q candidate (ties
// break to the lowest index). At K = 2 this is the pairwise logistic
// preference loss.
AlignLossResult preference_alignment_loss(const ScalarFieldParams& theta,
                                          const ScalarFieldParams& phi,
                                          const std::vector<AlignmentRecord>& records, double beta,
                                          const DiffusionSchedule& schedule, Rng& rng);

using FinetuneSink = std::function<void(long step, double loss, double mean_implied_q)>;

// Fine-tunes a copy of `behavior` against the alignment dataset. The behavior
// parameters are never modified; theta starts as a bit-identical copy.
ScalarFieldParams finetune_run(const ScalarFieldParams& behavior,
                               const std::vector<AlignmentRecord>& records,
                               const AlignConfig& config, const DiffusionSchedule& schedule,
                               const FinetuneSink& sink = nullptr);

// beta * (f_theta - f_phi) at a noisy action: the model's Q estimate up to an
// additive per-(state, t) constant.
double implied_q(const ScalarFieldParams& theta, const ScalarFieldParams& phi, const Vec& state,
                 const Vec& noisy_action, double t, double beta);

// CSV with columns "record,s*,k,a*,q": K rows per record keyed by the record
// index.
void save_alignment_csv(const std::string& path, const std::vector<AlignmentRecord>& records);
std::vector<AlignmentRecord> load_alignment_csv(const std::string& path);

}  // namespace diffalign
