#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "diffalign/autodiff.hpp"
#include "diffalign/rng.hpp"
#include "diffalign/schedule.hpp"

namespace diffalign {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Residual MLP mapping (noisy action, state, time embedding) to a single
// scalar f(a_t | s, t). The modeled score of the diffused behavior
// distribution is the gradient of f with respect to the action input, and
// -sigma_t * score is the noise-prediction view of the same model.
struct FieldConfig {
  int action_dim = 2;
  int state_dim = 0;      // 0 for the stateless 2D bandits
  int time_embed_dim = 16;  // even; sinusoidal features of t
  int width = 128;
  int blocks = 4;         // residual blocks, two dense layers each
  double dropout = 0.0;   // applied only when a training pass asks for it
  double ln_eps = 1e-5;

  int input_dim() const { return action_dim + state_dim + time_embed_dim; }
  void validate() const;
  bool operator==(const FieldConfig&) const = default;

  // Equality of everything that determines the parameter layout and the
  // forward computation; dropout is a training-time setting, not part of
  // the architecture.
  bool same_architecture(const FieldConfig& other) const {
    return action_dim == other.action_dim && state_dim == other.state_dim &&
           time_embed_dim == other.time_embed_dim && width == other.width &&
           blocks == other.blocks && ln_eps == other.ln_eps;
  }
};

struct ScalarFieldParams {
  FieldConfig config;
  std::vector<double> flat;
};

// Flat-vector layout of the parameter matrices, in graph-construction order.
struct ParamLayout {
  struct Entry {
    long offset;
    int rows;
    int cols;
  };
  std::vector<Entry> entries;
  long total = 0;
};

ParamLayout layout_of(const FieldConfig& config);

// Fan-in scaled uniform init; deterministic given the seed.
ScalarFieldParams init_params(std::uint64_t seed, const FieldConfig& config);

// Sinusoidal features of t with log-spaced frequencies, [B, time_embed_dim].
Mat time_embedding(const FieldConfig& config, const Vec& t);

// Per-block dropout masks (scaled inverted dropout). Only the pretraining
// loss passes these; fine-tuning and inference always run the identity.
std::vector<Mat> make_dropout_masks(const FieldConfig& config, int batch, Rng& rng);

// Graph assembly. `actions` is a leaf so callers can differentiate f with
// respect to the input; `params` are leaves in layout order.
struct FieldGraph {
  std::vector<ad::Var> params;
  ad::Var actions;  // [B, action_dim]
  ad::Var values;   // [B, 1]
};

FieldGraph build_field(ad::Graph& graph, const ScalarFieldParams& params, const Mat& actions,
                       const Mat& states, const Vec& t,
                       const std::vector<Mat>* dropout_masks = nullptr);

// Batched evaluation. `states` must be [B, state_dim] ([B, 0] when stateless),
// `t` one diffusion time per row, each in [0, 1].
Vec field_values(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                 const Vec& t);

// Gradient of f with respect to each action row, [B, action_dim].
Mat field_input_gradients(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                          const Vec& t);

// The modeled score of the diffused distribution at time t (>= t_min).
// Equal to the input gradient; the noise-prediction view is -sigma_t * score.
Mat field_scores(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                 const Vec& t, const DiffusionSchedule& schedule);

// Single-sample conveniences.
double field_value(const ScalarFieldParams& params, const Vec& action, const Vec& state, double t);
Vec field_input_gradient(const ScalarFieldParams& params, const Vec& action, const Vec& state,
                         double t);
Vec field_score(const ScalarFieldParams& params, const Vec& action, const Vec& state, double t,
                const DiffusionSchedule& schedule);

// Flat-vector helpers shared by the optimizers.
std::vector<double> extract_gradients(ad::Graph& graph, const std::vector<ad::Var>& grads,
                                      const ParamLayout& layout);

}  // namespace diffalign
