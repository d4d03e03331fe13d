#include "diffalign/critic.hpp"

#include <cmath>

#include "diffalign/autodiff.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/optimizer.hpp"

namespace diffalign {

namespace {

struct CriticLayout {
  struct Entry {
    long offset;
    int rows;
    int cols;
  };
  std::vector<Entry> entries;
  long total = 0;
};

CriticLayout critic_layout(int state_dim, int action_dim, int width, int hidden_layers) {
  CriticLayout layout;
  long offset = 0;
  auto push = [&](int rows, int cols) {
    layout.entries.push_back({offset, rows, cols});
    offset += static_cast<long>(rows) * cols;
  };
  int in = state_dim + action_dim;
  push(in, width);
  push(1, width);
  for (int l = 1; l < hidden_layers; ++l) {
    push(width, width);
    push(1, width);
  }
  push(width, 1);
  push(1, 1);
  layout.total = offset;
  return layout;
}

Mat entry_matrix(const std::vector<double>& flat, const CriticLayout::Entry& e) {
  Mat m(e.rows, e.cols);
  long idx = e.offset;
  for (int r = 0; r < e.rows; ++r) {
    for (int c = 0; c < e.cols; ++c) m(r, c) = flat[static_cast<size_t>(idx++)];
  }
  return m;
}

struct CriticGraph {
  std::vector<ad::Var> params;
  ad::Var values;  // [B, 1]
};

CriticGraph build_critic(ad::Graph& graph, const CriticParams& critic, const Mat& states,
                         const Mat& actions) {
  critic.validate();
  if (actions.cols() != critic.action_dim || states.cols() != critic.state_dim ||
      states.rows() != actions.rows()) {
    throw ShapeError("critic: input dimensions do not match");
  }
  CriticLayout layout =
      critic_layout(critic.state_dim, critic.action_dim, critic.width, critic.hidden_layers);

  CriticGraph cg;
  for (const auto& e : layout.entries) {
    cg.params.push_back(graph.leaf(entry_matrix(critic.flat, e)));
  }
  Mat input(actions.rows(), critic.state_dim + critic.action_dim);
  if (critic.state_dim > 0) input.leftCols(critic.state_dim) = states;
  input.rightCols(critic.action_dim) = actions;

  ad::Var h = graph.constant(input);
  size_t p = 0;
  for (int l = 0; l < critic.hidden_layers; ++l) {
    h = ad::silu(ad::add_row(ad::matmul(h, cg.params[p]), cg.params[p + 1]));
    p += 2;
  }
  cg.values = ad::add_row(ad::matmul(h, cg.params[p]), cg.params[p + 1]);
  return cg;
}

}  // namespace

long CriticParams::param_count() const {
  return critic_layout(state_dim, action_dim, width, hidden_layers).total;
}

void CriticParams::validate() const {
  if (action_dim < 1 || state_dim < 0) throw ConfigError("critic: bad dimensions");
  if (width < 1 || hidden_layers < 1) throw ConfigError("critic: bad architecture");
  if (static_cast<long>(flat.size()) != param_count()) {
    throw ShapeError("critic: parameter vector has wrong length");
  }
}

void CriticTrainConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("critic: expectile tau must be in (0, 1)");
  if (steps < 1 || batch < 1) throw ConfigError("critic: steps and batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("critic: learning rate must be positive");
  if (width < 1 || hidden_layers < 1) throw ConfigError("critic: bad architecture");
}

CriticParams init_critic(std::uint64_t seed, int state_dim, int action_dim, int width,
                         int hidden_layers) {
  CriticParams c;
  c.state_dim = state_dim;
  c.action_dim = action_dim;
  c.width = width;
  c.hidden_layers = hidden_layers;
  CriticLayout layout = critic_layout(state_dim, action_dim, width, hidden_layers);
  c.flat.assign(static_cast<size_t>(layout.total), 0.0);
  Rng rng(seed);
  for (size_t k = 0; k < layout.entries.size(); ++k) {
    if (k % 2 == 1) continue;  // biases stay zero
    const auto& e = layout.entries[k];
    double bound = std::sqrt(1.0 / e.rows);
    for (long i = 0; i < static_cast<long>(e.rows) * e.cols; ++i) {
      c.flat[static_cast<size_t>(e.offset + i)] = rng.uniform(-bound, bound);
    }
  }
  return c;
}

Vec critic_values(const CriticParams& critic, const Mat& states, const Mat& actions) {
  ad::Graph graph;
  CriticGraph cg = build_critic(graph, critic, states, actions);
  return graph.value(cg.values).col(0);
}

double q_eval(const QSource& source, const Vec& state, const Vec& action) {
  if (std::holds_alternative<QField>(source)) {
    if (action.size() != 2) throw ShapeError("q_eval: analytic fields are 2D");
    return true_q(std::get<QField>(source), Eigen::Vector2d(action[0], action[1]));
  }
  const CriticParams& critic = std::get<CriticParams>(source);
  if (!action.allFinite() || !state.allFinite()) throw InputError("q_eval: non-finite inputs");
  return critic_values(critic, state.transpose(), action.transpose())[0];
}

ExpectileLossResult expectile_loss(const CriticParams& critic, const Mat& states,
                                   const Mat& actions, const Vec& rewards, double tau) {
  if (rewards.size() != actions.rows()) throw ShapeError("expectile_loss: reward count mismatch");
  if (rewards.size() == 0) throw InputError("expectile_loss: empty batch");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("expectile_loss: tau must be in (0, 1)");

  ad::Graph graph;
  CriticGraph cg = build_critic(graph, critic, states, actions);
  ad::Var residual = ad::sub(graph.constant(rewards), cg.values);

  // The asymmetric weight is piecewise constant in the residual, so it is
  // detached; the loss gradient is exact almost everywhere.
  const Mat& u = graph.value(residual);
  Mat w(u.rows(), 1);
  for (long i = 0; i < u.rows(); ++i) w(i, 0) = u(i, 0) < 0.0 ? 1.0 - tau : tau;

  ad::Var weighted = ad::mul(graph.constant(w), ad::mul(residual, residual));
  ad::Var loss = ad::scale(ad::sum_all(weighted), 1.0 / rewards.size());

  auto grads = graph.gradients(loss, cg.params);
  ExpectileLossResult result;
  result.loss = graph.value(loss)(0, 0);
  result.grad.assign(static_cast<size_t>(critic.param_count()), 0.0);
  CriticLayout layout =
      critic_layout(critic.state_dim, critic.action_dim, critic.width, critic.hidden_layers);
  for (size_t e = 0; e < layout.entries.size(); ++e) {
    const auto& entry = layout.entries[e];
    const Mat& m = graph.value(grads[e]);
    long idx = entry.offset;
    for (int r = 0; r < entry.rows; ++r) {
      for (int c = 0; c < entry.cols; ++c) {
        result.grad[static_cast<size_t>(idx++)] = m(r, c);
      }
    }
  }
  return result;
}

CriticParams train_expectile_critic(const Mat& states, const Mat& actions, const Vec& rewards,
                                    const CriticTrainConfig& config) {
  config.validate();
  if (rewards.size() == 0) throw InputError("critic: empty training data");
  if (actions.rows() != rewards.size() || states.rows() != rewards.size()) {
    throw ShapeError("critic: data row counts differ");
  }

  CriticParams critic =
      init_critic(Rng::substream(config.seed, "init").next_u64(), static_cast<int>(states.cols()),
                  static_cast<int>(actions.cols()), config.width, config.hidden_layers);
  Rng batch_rng = Rng::substream(config.seed, "data");
  Adam adam(critic.flat.size(), config.lr);

  const int n = static_cast<int>(rewards.size());
  const int batch = std::min(config.batch, n);
  Mat bs(batch, states.cols());
  Mat ba(batch, actions.cols());
  Vec br(batch);
  for (int step = 1; step <= config.steps; ++step) {
    for (int i = 0; i < batch; ++i) {
      int idx = batch_rng.uniform_int(n);
      bs.row(i) = states.row(idx);
      ba.row(i) = actions.row(idx);
      br[i] = rewards[idx];
    }
    ExpectileLossResult r = expectile_loss(critic, bs, ba, br, config.tau);
    if (!std::isfinite(r.loss)) throw TrainingError("critic: non-finite loss", step);
    adam.step(critic.flat, r.grad);
  }
  return critic;
}

}  // namespace diffalign
