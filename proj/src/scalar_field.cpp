#include "diffalign/scalar_field.hpp"

#include <cmath>
#include <string>

#include "diffalign/errors.hpp"

namespace diffalign {

namespace {

void check_inputs(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                  const Vec& t) {
  const FieldConfig& cfg = params.config;
  if (actions.cols() != cfg.action_dim) {
    throw ShapeError("field: action dimension " + std::to_string(actions.cols()) +
                     " does not match config " + std::to_string(cfg.action_dim));
  }
  if (states.cols() != cfg.state_dim) {
    throw ShapeError("field: state dimension " + std::to_string(states.cols()) +
                     " does not match config " + std::to_string(cfg.state_dim));
  }
  if (states.rows() != actions.rows() || t.size() != actions.rows()) {
    throw ShapeError("field: batch size mismatch between actions, states and t");
  }
  if (!actions.allFinite() || !states.allFinite()) {
    throw InputError("field: non-finite inputs");
  }
  for (long i = 0; i < t.size(); ++i) {
    if (!(t[i] >= 0.0 && t[i] <= 1.0)) {
      throw InputError("field: diffusion time outside [0, 1]: t = " + std::to_string(t[i]));
    }
  }
  ParamLayout layout = layout_of(cfg);
  if (static_cast<long>(params.flat.size()) != layout.total) {
    throw ShapeError("field: parameter vector has wrong length for config");
  }
}

Mat param_matrix(const ScalarFieldParams& params, const ParamLayout::Entry& e) {
  Mat m(e.rows, e.cols);
  long idx = e.offset;
  for (int r = 0; r < e.rows; ++r) {
    for (int c = 0; c < e.cols; ++c) {
      m(r, c) = params.flat[static_cast<size_t>(idx++)];
    }
  }
  return m;
}

// LayerNorm over features, composed from primitives so that second-order
// differentiation falls out of the op set.
ad::Var layer_norm(ad::Var h, ad::Var gain, ad::Var bias, double eps) {
  ad::Graph& g = *h.graph;
  int width = static_cast<int>(g.value(h).cols());
  int batch = static_cast<int>(g.value(h).rows());
  ad::Var mean = ad::scale(ad::rowsum(h), 1.0 / width);
  ad::Var centered = ad::sub(h, ad::bcast_cols(mean, width));
  ad::Var var = ad::scale(ad::rowsum(ad::mul(centered, centered)), 1.0 / width);
  ad::Var inv_sd = ad::reciprocal(ad::sqrt(ad::add_scalar(var, eps)));
  ad::Var normed = ad::mul(centered, ad::bcast_cols(inv_sd, width));
  return ad::add_row(ad::mul(normed, ad::bcast_rows(gain, batch)), bias);
}

}  // namespace

void FieldConfig::validate() const {
  if (action_dim < 1) throw ConfigError("field: action_dim must be >= 1");
  if (state_dim < 0) throw ConfigError("field: state_dim must be >= 0");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("field: time_embed_dim must be even and >= 2");
  }
  if (width < 1) throw ConfigError("field: width must be >= 1");
  if (blocks < 1) throw ConfigError("field: blocks must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("field: dropout must be in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("field: ln_eps must be positive");
}

ParamLayout layout_of(const FieldConfig& config) {
  config.validate();
  ParamLayout layout;
  long offset = 0;
  auto push = [&](int rows, int cols) {
    layout.entries.push_back({offset, rows, cols});
    offset += static_cast<long>(rows) * cols;
  };
  int w = config.width;
  push(config.input_dim(), w);  // input projection
  push(1, w);
  for (int b = 0; b < config.blocks; ++b) {
    push(1, w);  // layer norm gain
    push(1, w);  // layer norm bias
    push(w, w);  // first dense
    push(1, w);
    push(w, w);  // second dense
    push(1, w);
  }
  push(1, w);  // final layer norm
  push(1, w);
  push(w, 1);  // output projection
  push(1, 1);
  layout.total = offset;
  return layout;
}

ScalarFieldParams init_params(std::uint64_t seed, const FieldConfig& config) {
  ParamLayout layout = layout_of(config);
  ScalarFieldParams params;
  params.config = config;
  params.flat.assign(static_cast<size_t>(layout.total), 0.0);
  Rng rng(seed);

  int w = config.width;
  size_t entry_idx = 0;
  auto fill_uniform = [&](const ParamLayout::Entry& e) {
    double bound = std::sqrt(1.0 / e.rows);  // fan-in scaled
    for (long i = 0; i < static_cast<long>(e.rows) * e.cols; ++i) {
      params.flat[static_cast<size_t>(e.offset + i)] = rng.uniform(-bound, bound);
    }
  };
  auto fill_const = [&](const ParamLayout::Entry& e, double v) {
    for (long i = 0; i < static_cast<long>(e.rows) * e.cols; ++i) {
      params.flat[static_cast<size_t>(e.offset + i)] = v;
    }
  };

  fill_uniform(layout.entries[entry_idx++]);  // input weight
  entry_idx++;                                // input bias stays zero
  for (int b = 0; b < config.blocks; ++b) {
    fill_const(layout.entries[entry_idx++], 1.0);  // ln gain
    entry_idx++;                                   // ln bias zero
    fill_uniform(layout.entries[entry_idx++]);     // W1
    entry_idx++;
    fill_uniform(layout.entries[entry_idx++]);  // W2
    entry_idx++;
  }
  fill_const(layout.entries[entry_idx++], 1.0);  // final ln gain
  entry_idx++;
  fill_uniform(layout.entries[entry_idx++]);  // output weight
  entry_idx++;
  (void)w;
  return params;
}

Mat time_embedding(const FieldConfig& config, const Vec& t) {
  int half = config.time_embed_dim / 2;
  Mat emb(t.size(), config.time_embed_dim);
  for (long i = 0; i < t.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      // Frequencies log-spaced from 1 to 1000 cycles over the unit interval,
      // enough to resolve t down to the t_min clamp.
      double freq = half > 1 ? std::pow(1000.0, static_cast<double>(k) / (half - 1)) : 1.0;
      double phase = 2.0 * M_PI * freq * t[i];
      emb(i, 2 * k) = std::sin(phase);
      emb(i, 2 * k + 1) = std::cos(phase);
    }
  }
  return emb;
}

std::vector<Mat> make_dropout_masks(const FieldConfig& config, int batch, Rng& rng) {
  std::vector<Mat> masks;
  if (config.dropout <= 0.0) return masks;
  double keep = 1.0 - config.dropout;
  masks.reserve(static_cast<size_t>(config.blocks));
  for (int b = 0; b < config.blocks; ++b) {
    Mat m(batch, config.width);
    for (int r = 0; r < batch; ++r) {
      for (int c = 0; c < config.width; ++c) {
        m(r, c) = rng.uniform01() < keep ? 1.0 / keep : 0.0;
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

FieldGraph build_field(ad::Graph& graph, const ScalarFieldParams& params, const Mat& actions,
                       const Mat& states, const Vec& t, const std::vector<Mat>* dropout_masks) {
  check_inputs(params, actions, states, t);
  const FieldConfig& cfg = params.config;
  ParamLayout layout = layout_of(cfg);

  FieldGraph fg;
  fg.params.reserve(layout.entries.size());
  for (const auto& e : layout.entries) {
    fg.params.push_back(graph.leaf(param_matrix(params, e)));
  }
  fg.actions = graph.leaf(actions);

  ad::Var x = fg.actions;
  if (cfg.state_dim > 0) {
    x = ad::concat_cols(x, graph.constant(states));
  }
  x = ad::concat_cols(x, graph.constant(time_embedding(cfg, t)));

  size_t p = 0;
  ad::Var h = ad::add_row(ad::matmul(x, fg.params[p]), fg.params[p + 1]);
  p += 2;
  for (int b = 0; b < cfg.blocks; ++b) {
    ad::Var u = layer_norm(h, fg.params[p], fg.params[p + 1], cfg.ln_eps);
    u = ad::silu(ad::add_row(ad::matmul(u, fg.params[p + 2]), fg.params[p + 3]));
    if (dropout_masks && !dropout_masks->empty()) {
      u = ad::mul(u, graph.constant((*dropout_masks)[static_cast<size_t>(b)]));
    }
    u = ad::add_row(ad::matmul(u, fg.params[p + 4]), fg.params[p + 5]);
    h = ad::add(h, u);
    p += 6;
  }
  ad::Var out = ad::silu(layer_norm(h, fg.params[p], fg.params[p + 1], cfg.ln_eps));
  fg.values = ad::add_row(ad::matmul(out, fg.params[p + 2]), fg.params[p + 3]);
  return fg;
}

Vec field_values(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                 const Vec& t) {
  ad::Graph graph;
  FieldGraph fg = build_field(graph, params, actions, states, t);
  return graph.value(fg.values).col(0);
}

Mat field_input_gradients(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                          const Vec& t) {
  ad::Graph graph;
  FieldGraph fg = build_field(graph, params, actions, states, t);
  // Rows are independent, so the gradient of the batch sum is the per-row
  // input gradient.
  auto grads = graph.gradients(ad::sum_all(fg.values), {fg.actions});
  return graph.value(grads[0]);
}

Mat field_scores(const ScalarFieldParams& params, const Mat& actions, const Mat& states,
                 const Vec& t, const DiffusionSchedule& schedule) {
  for (long i = 0; i < t.size(); ++i) {
    if (t[i] < schedule.t_min) {
      throw InputError("score: t below schedule t_min (t = " + std::to_string(t[i]) + ")");
    }
  }
  return field_input_gradients(params, actions, states, t);
}

double field_value(const ScalarFieldParams& params, const Vec& action, const Vec& state,
                   double t) {
  Mat a = action.transpose();
  Mat s = state.transpose();
  Vec tv = Vec::Constant(1, t);
  return field_values(params, a, s, tv)[0];
}

Vec field_input_gradient(const ScalarFieldParams& params, const Vec& action, const Vec& state,
                         double t) {
  Mat a = action.transpose();
  Mat s = state.transpose();
  Vec tv = Vec::Constant(1, t);
  return field_input_gradients(params, a, s, tv).row(0);
}

Vec field_score(const ScalarFieldParams& params, const Vec& action, const Vec& state, double t,
                const DiffusionSchedule& schedule) {
  Mat a = action.transpose();
  Mat s = state.transpose();
  Vec tv = Vec::Constant(1, t);
  return field_scores(params, a, s, tv, schedule).row(0);
}

std::vector<double> extract_gradients(ad::Graph& graph, const std::vector<ad::Var>& grads,
                                      const ParamLayout& layout) {
  std::vector<double> flat(static_cast<size_t>(layout.total), 0.0);
  for (size_t e = 0; e < layout.entries.size(); ++e) {
    const auto& entry = layout.entries[e];
    const Mat& m = graph.value(grads[e]);
    long idx = entry.offset;
    for (int r = 0; r < entry.rows; ++r) {
      for (int c = 0; c < entry.cols; ++c) {
        flat[static_cast<size_t>(idx++)] = m(r, c);
      }
    }
  }
  return flat;
}

}  // namespace diffalign
