#include "diffalign/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "diffalign/csv.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/optimizer.hpp"

namespace diffalign {

void AlignmentRecord::validate() const {
  if (actions.rows() < 2) throw InputError("alignment record: needs K >= 2 candidates");
  if (q.size() != actions.rows()) {
    throw ShapeError("alignment record: Q count does not match candidate count");
  }
  if (!q.allFinite() || !actions.allFinite() || !state.allFinite()) {
    throw InputError("alignment record: non-finite values");
  }
}

AlignMode parse_align_mode(const std::string& name) {
  if (name == "value") return AlignMode::kValue;
  if (name == "preference") return AlignMode::kPreference;
  if (name == "dpo") return AlignMode::kDpo;
  throw ConfigError("align: unknown mode '" + name + "'");
}

std::string to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::kValue: return "value";
    case AlignMode::kPreference: return "preference";
    case AlignMode::kDpo: return "dpo";
  }
  return "value";
}

void AlignConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("align: beta must be positive");
  if (K < 2) throw ConfigError("align: K must be >= 2");
  if (mode == AlignMode::kDpo && K != 2) {
    throw ConfigError("align: dpo mode requires K = 2");
  }
  if (!(lr > 0.0)) throw ConfigError("align: learning rate must be positive");
  if (steps < 0) throw ConfigError("align: steps must be >= 0");
  if (batch < 1) throw ConfigError("align: batch must be >= 1");
}

std::vector<AlignmentRecord> build_alignment_dataset(const ScalarFieldParams& behavior,
                                                     const Mat& states, const QFn& q, int K,
                                                     const SamplerConfig& sampler_config,
                                                     const DiffusionSchedule& schedule, Rng& rng) {
  if (K < 2) throw ConfigError("alignment dataset: K must be >= 2");
  std::vector<AlignmentRecord> records;
  records.reserve(static_cast<size_t>(states.rows()));
  for (long i = 0; i < states.rows(); ++i) {
    Vec state = states.row(i);
    Mat repeated = state.transpose().replicate(K, 1);
    Mat candidates;
    try {
      candidates = sample_batch(behavior, repeated, sampler_config, schedule, rng);
    } catch (const SamplerError& e) {
      throw SamplerError("alignment dataset: sampling failed for state " + std::to_string(i) +
                             ": " + e.what(),
                         e.step);
    }
    AlignmentRecord rec;
    rec.state = state;
    rec.actions = candidates;
    rec.q.resize(K);
    for (int k = 0; k < K; ++k) {
      rec.q[k] = q(state, candidates.row(k).transpose());
    }
    rec.validate();
    records.push_back(std::move(rec));
  }
  return records;
}

Vec optimality_probability(const Vec& q) {
  if (q.size() < 1) throw InputError("optimality_probability: empty Q vector");
  if (!q.allFinite()) throw InputError("optimality_probability: non-finite Q values");
  double m = q.maxCoeff();
  Vec e = (q.array() - m).exp();
  return e / e.sum();
}

namespace {

// Shared implementation of the two alignment losses; they differ only in the
// target simplex placed over the K candidates.
AlignLossResult alignment_loss(const ScalarFieldParams& theta, const ScalarFieldParams& phi,
                               const std::vector<AlignmentRecord>& records, double beta,
                               const DiffusionSchedule& schedule, Rng& rng, bool one_hot_target) {
  if (records.empty()) throw InputError("alignment loss: no records");
  if (!theta.config.same_architecture(phi.config)) {
    throw ShapeError("alignment loss: policy and behavior architectures differ");
  }
  if (!(beta > 0.0)) throw ConfigError("alignment loss: beta must be positive");

  const int K = records.front().candidates();
  const int dim = theta.config.action_dim;
  const int state_dim = theta.config.state_dim;
  const long B = static_cast<long>(records.size());

  Mat noisy(B * K, dim);
  Mat states(B * K, state_dim);
  Vec t_rows(B * K);
  Mat targets(B, K);
  for (long r = 0; r < B; ++r) {
    const AlignmentRecord& rec = records[static_cast<size_t>(r)];
    rec.validate();
    if (rec.candidates() != K) {
      throw ShapeError("alignment loss: records disagree on K");
    }
    // One shared t per record; K independent noises.
    double t = rng.uniform(schedule.t_min, 1.0);
    auto [alpha, sigma] = schedule.alpha_sigma(t);
    for (int k = 0; k < K; ++k) {
      long row = r * K + k;
      for (int j = 0; j < dim; ++j) {
        noisy(row, j) = alpha * rec.actions(k, j) + sigma * rng.normal();
      }
      if (state_dim > 0) states.row(row) = rec.state.transpose();
      t_rows[row] = t;
    }
    if (one_hot_target) {
      int winner = 0;
      for (int k = 1; k < K; ++k) {
        if (rec.q[k] > rec.q[winner]) winner = k;
      }
      targets.row(r).setZero();
      targets(r, winner) = 1.0;
    } else {
      targets.row(r) = optimality_probability(rec.q).transpose();
    }
  }

  // Behavior values are constants; only theta receives gradients.
  Vec phi_values = field_values(phi, noisy, states, t_rows);

  ad::Graph graph;
  FieldGraph fg = build_field(graph, theta, noisy, states, t_rows);
  ad::Var delta = ad::sub(fg.values, graph.constant(phi_values));
  ad::Var logits = ad::reshape(ad::scale(delta, beta), static_cast<int>(B), K);
  ad::Var target_v = graph.constant(targets);
  // Cross-entropy = logsumexp(logits) - sum_k target_k * logit_k per record.
  ad::Var per_record = ad::sub(ad::logsumexp_rows(logits), ad::rowsum(ad::mul(target_v, logits)));
  ad::Var loss = ad::scale(ad::sum_all(per_record), 1.0 / B);

  auto grads = graph.gradients(loss, fg.params);
  AlignLossResult result;
  result.loss = graph.value(loss)(0, 0);
  result.grad = extract_gradients(graph, grads, layout_of(theta.config));
  result.mean_implied_q = graph.value(logits).mean();
  return result;
}

}  // namespace

AlignLossResult value_alignment_loss(const ScalarFieldParams& theta, const ScalarFieldParams& phi,
                                     const std::vector<AlignmentRecord>& records, double beta,
                                     const DiffusionSchedule& schedule, Rng& rng) {
  return alignment_loss(theta, phi, records, beta, schedule, rng, /*one_hot_target=*/false);
}

AlignLossResult preference_alignment_loss(const ScalarFieldParams& theta,
                                          const ScalarFieldParams& phi,
                                          const std::vector<AlignmentRecord>& records, double beta,
                                          const DiffusionSchedule& schedule, Rng& rng) {
  return alignment_loss(theta, phi, records, beta, schedule, rng, /*one_hot_target=*/true);
}

ScalarFieldParams finetune_run(const ScalarFieldParams& behavior,
                               const std::vector<AlignmentRecord>& records,
                               const AlignConfig& config, const DiffusionSchedule& schedule,
                               const FinetuneSink& sink) {
  config.validate();
  schedule.validate();
  if (records.empty()) throw InputError("finetune: empty alignment dataset");

  // theta starts as an exact copy of the behavior weights. Dropout stays off
  // during fine-tuning regardless of the pretraining setting.
  ScalarFieldParams theta = behavior;
  theta.config.dropout = 0.0;

  Rng noise_rng = Rng::substream(config.seed, "noise");
  Rng batch_rng = Rng::substream(config.seed, "data");
  Adam adam(theta.flat.size(), config.lr);

  const bool one_hot = config.mode != AlignMode::kValue;
  const int n = static_cast<int>(records.size());
  std::vector<AlignmentRecord> batch(static_cast<size_t>(config.batch));
  for (int step = 1; step <= config.steps; ++step) {
    for (int i = 0; i < config.batch; ++i) {
      batch[static_cast<size_t>(i)] = records[static_cast<size_t>(batch_rng.uniform_int(n))];
    }
    AlignLossResult r = alignment_loss(theta, behavior, batch, config.beta, schedule, noise_rng,
                                       one_hot);
    if (!std::isfinite(r.loss)) {
      throw TrainingError("finetune: non-finite loss", step);
    }
    adam.step(theta.flat, r.grad);
    if (sink) sink(step, r.loss, r.mean_implied_q);
  }
  return theta;
}

double implied_q(const ScalarFieldParams& theta, const ScalarFieldParams& phi, const Vec& state,
                 const Vec& noisy_action, double t, double beta) {
  return beta *
         (field_value(theta, noisy_action, state, t) - field_value(phi, noisy_action, state, t));
}

void save_alignment_csv(const std::string& path, const std::vector<AlignmentRecord>& records) {
  if (records.empty()) throw InputError("alignment csv: nothing to write");
  const int state_dim = static_cast<int>(records.front().state.size());
  const int action_dim = static_cast<int>(records.front().actions.cols());
  csv::Table t;
  t.header.push_back("record");
  for (int j = 0; j < state_dim; ++j) t.header.push_back("s" + std::to_string(j));
  t.header.push_back("k");
  for (int j = 0; j < action_dim; ++j) t.header.push_back("a" + std::to_string(j));
  t.header.push_back("q");
  for (size_t r = 0; r < records.size(); ++r) {
    const AlignmentRecord& rec = records[r];
    for (int k = 0; k < rec.candidates(); ++k) {
      std::vector<double> row;
      row.push_back(static_cast<double>(r));
      for (int j = 0; j < state_dim; ++j) row.push_back(rec.state[j]);
      row.push_back(static_cast<double>(k));
      for (int j = 0; j < action_dim; ++j) row.push_back(rec.actions(k, j));
      row.push_back(rec.q[k]);
      t.rows.push_back(std::move(row));
    }
  }
  csv::write_table(path, t);
}

std::vector<AlignmentRecord> load_alignment_csv(const std::string& path) {
  csv::Table t = csv::read_table(path);
  int state_dim = 0;
  size_t col = 0;
  if (t.header.empty() || t.header[col] != "record") {
    throw InputError(path + ": expected 'record' column first");
  }
  ++col;
  while (col < t.header.size() && t.header[col][0] == 's') {
    ++state_dim;
    ++col;
  }
  if (col >= t.header.size() || t.header[col] != "k") {
    throw InputError(path + ": expected 'k' column");
  }
  ++col;
  int action_dim = 0;
  while (col < t.header.size() && t.header[col][0] == 'a') {
    ++action_dim;
    ++col;
  }
  if (action_dim == 0 || col >= t.header.size() || t.header[col] != "q") {
    throw InputError(path + ": expected action columns then 'q'");
  }

  std::vector<AlignmentRecord> records;
  std::vector<std::vector<double>> pending;
  long current = -1;
  auto flush = [&]() {
    if (pending.empty()) return;
    AlignmentRecord rec;
    rec.state.resize(state_dim);
    for (int j = 0; j < state_dim; ++j) rec.state[j] = pending.front()[static_cast<size_t>(1 + j)];
    rec.actions.resize(static_cast<long>(pending.size()), action_dim);
    rec.q.resize(static_cast<long>(pending.size()));
    for (size_t k = 0; k < pending.size(); ++k) {
      for (int j = 0; j < action_dim; ++j) {
        rec.actions(static_cast<long>(k), j) = pending[k][static_cast<size_t>(2 + state_dim + j)];
      }
      rec.q[static_cast<long>(k)] = pending[k].back();
    }
    rec.validate();
    records.push_back(std::move(rec));
    pending.clear();
  };
  for (auto& row : t.rows) {
    long id = static_cast<long>(row[0]);
    if (id != current) {
      flush();
      current = id;
    }
    pending.push_back(std::move(row));
  }
  flush();
  if (records.empty()) throw InputError(path + ": no alignment records");
  return records;
}

}  // namespace diffalign
