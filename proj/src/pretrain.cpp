#include "diffalign/pretrain.hpp"

#include <cmath>

#include "diffalign/errors.hpp"
#include "diffalign/optimizer.hpp"

namespace diffalign {

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("pretrain: batch must be >= 1");
  if (steps < 1) throw ConfigError("pretrain: steps must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("pretrain: learning rate must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("pretrain: dropout must be in [0, 1)");
}

LossResult noise_prediction_loss(const ScalarFieldParams& params, const Mat& states,
                                 const Mat& actions, const DiffusionSchedule& schedule, Rng& rng,
                                 bool use_dropout) {
  if (actions.rows() == 0) {
    throw InputError("noise_prediction_loss: empty batch");
  }
  const long batch = actions.rows();
  const int dim = static_cast<int>(actions.cols());

  Vec t(batch);
  Vec sigma_col(batch);
  Mat noise(batch, dim);
  Mat noisy(batch, dim);
  for (long i = 0; i < batch; ++i) {
    t[i] = rng.uniform(schedule.t_min, 1.0);
    auto [alpha, sigma] = schedule.alpha_sigma(t[i]);
    sigma_col[i] = sigma;
    for (int j = 0; j < dim; ++j) {
      noise(i, j) = rng.normal();
      noisy(i, j) = alpha * actions(i, j) + sigma * noise(i, j);
    }
  }

  ad::Graph graph;
  std::vector<Mat> masks;
  const std::vector<Mat>* mask_ptr = nullptr;
  if (use_dropout && params.config.dropout > 0.0) {
    masks = make_dropout_masks(params.config, static_cast<int>(batch), rng);
    mask_ptr = &masks;
  }
  FieldGraph fg = build_field(graph, params, noisy, states, t, mask_ptr);

  // Per-row input gradients of f, as differentiable nodes.
  ad::Var input_grad = graph.gradients(ad::sum_all(fg.values), {fg.actions})[0];

  ad::Var sigma_bc = ad::bcast_cols(graph.constant(sigma_col), dim);
  ad::Var residual = ad::add(ad::mul(sigma_bc, input_grad), graph.constant(noise));
  ad::Var loss = ad::scale(ad::sum_all(ad::mul(residual, residual)), 1.0 / batch);

  auto grads = graph.gradients(loss, fg.params);
  LossResult result;
  result.loss = graph.value(loss)(0, 0);
  result.grad = extract_gradients(graph, grads, layout_of(params.config));
  return result;
}

ScalarFieldParams pretrain_run(const BehaviorDataset& dataset, const TrainConfig& config,
                               const DiffusionSchedule& schedule, const FieldConfig& field,
                               const MetricsSink& sink) {
  config.validate();
  schedule.validate();
  dataset.validate();
  if (dataset.size() == 0) throw InputError("pretrain: empty dataset");
  if (dataset.action_dim() != field.action_dim || dataset.state_dim() != field.state_dim) {
    throw ShapeError("pretrain: dataset dimensions do not match the field config");
  }

  FieldConfig cfg = field;
  cfg.dropout = config.dropout;
  ScalarFieldParams params = init_params(Rng::substream(config.seed, "init").next_u64(), cfg);

  Rng noise_rng = Rng::substream(config.seed, "noise");
  Rng batch_rng = Rng::substream(config.seed, "data");
  Adam adam(params.flat.size(), config.lr, config.adam_beta1, config.adam_beta2);

  const long n = dataset.size();
  Mat batch_actions(config.batch, dataset.action_dim());
  Mat batch_states(config.batch, dataset.state_dim());
  for (int step = 1; step <= config.steps; ++step) {
    for (int i = 0; i < config.batch; ++i) {
      long idx = batch_rng.uniform_int(static_cast<int>(n));
      batch_actions.row(i) = dataset.actions.row(idx);
      if (dataset.state_dim() > 0) batch_states.row(i) = dataset.states.row(idx);
    }
    LossResult r = noise_prediction_loss(params, batch_states, batch_actions, schedule, noise_rng,
                                         config.dropout > 0.0);
    if (!std::isfinite(r.loss)) {
      throw TrainingError("pretrain: non-finite loss", step);
    }
    adam.step(params.flat, r.grad);
    if (sink) sink(step, r.loss);
  }
  return params;
}

}  // namespace diffalign
