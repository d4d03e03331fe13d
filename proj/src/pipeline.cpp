#include "diffalign/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "diffalign/checkpoint.hpp"
#include "diffalign/csv.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/oracle.hpp"

namespace diffalign {

namespace fs = std::filesystem;

namespace {

void ensure_out_dir(const RunConfig& config) {
  if (config.out_dir.empty()) throw ConfigError("run: out_dir must not be empty");
  fs::create_directories(config.out_dir);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_snapshot(const RunConfig& config, const std::string& snapshot) {
  if (snapshot.empty()) return;
  std::ofstream out(join(config.out_dir, "config.snapshot"));
  if (!out) throw InputError("cannot write config snapshot in " + config.out_dir);
  out << snapshot;
}

ScalarFieldParams load_field_checkpoint(const std::string& path, const RunConfig& config,
                                        bool check_arch) {
  Checkpoint ckpt = load_checkpoint(path);
  ScalarFieldParams params = ckpt.to_field();
  if (check_arch && !params.config.same_architecture(config.field)) {
    throw CheckpointError("checkpoint architecture in " + path +
                          " does not match the run config");
  }
  return params;
}

std::string format_t_tag(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", t);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  parse_dist2d(distribution);
  if (qfield != "auto") parse_qfield(qfield);
  if (count < 0) throw ConfigError("task: count must be >= 0");
  if (noise < 0.0) throw ConfigError("task: noise must be >= 0");
  schedule.validate();
  field.validate();
  pretrain.validate();
  align.validate();
  sampler.validate();
  critic.validate();
  if (critic_source != "analytic" && critic_source != "learned") {
    throw ConfigError("critic: source must be 'analytic' or 'learned'");
  }
  if (align_states < 1) throw ConfigError("align: states must be >= 1");
}

Bandit2DSpec RunConfig::task_spec() const {
  Bandit2DSpec spec;
  spec.dist = parse_dist2d(distribution);
  spec.count = count;
  spec.noise = noise;
  spec.qfield = qfield == "auto" ? default_qfield(spec.dist)
                                 : QField{parse_qfield(qfield), {0.0, 0.0}, 1.0};
  spec.seed = Rng::substream(seed, "data").next_u64();
  return spec;
}

BehaviorDataset resolve_dataset(const RunConfig& config) {
  if (!config.data_csv.empty()) {
    return load_behavior_csv(config.data_csv);
  }
  return generate(config.task_spec());
}

QFn resolve_q_fn(const RunConfig& config, const BehaviorDataset& dataset,
                 CriticParams* trained_out) {
  Bandit2DSpec spec = config.task_spec();
  if (config.critic_source == "analytic") {
    QField field = spec.qfield;
    return [field](const Vec&, const Vec& a) {
      return true_q(field, Eigen::Vector2d(a[0], a[1]));
    };
  }
  // Learned critic on synthetic rewards: true Q plus observation noise.
  Rng reward_rng = Rng::substream(config.seed, "rewards");
  Vec rewards(dataset.size());
  for (long i = 0; i < dataset.size(); ++i) {
    Eigen::Vector2d a(dataset.actions(i, 0), dataset.actions(i, 1));
    rewards[i] = true_q(spec.qfield, a) + config.reward_noise * reward_rng.normal();
  }
  CriticTrainConfig cfg = config.critic;
  cfg.seed = Rng::substream(config.seed, "critic").next_u64();
  CriticParams critic =
      train_expectile_critic(dataset.states, dataset.actions, rewards, cfg);
  if (trained_out) *trained_out = critic;
  return [critic](const Vec& s, const Vec& a) {
    return critic_values(critic, s.transpose(), a.transpose())[0];
  };
}

void cmd_pretrain(const RunConfig& config, const std::string& snapshot) {
  config.validate();
  ensure_out_dir(config);
  BehaviorDataset dataset = resolve_dataset(config);
  if (dataset.action_dim() != config.field.action_dim ||
      dataset.state_dim() != config.field.state_dim) {
    throw ConfigError("pretrain: dataset dimensions do not match [field] config");
  }

  csv::Table metrics;
  metrics.header = {"step", "loss"};
  TrainConfig train = config.pretrain;
  train.seed = config.seed;
  ScalarFieldParams params =
      pretrain_run(dataset, train, config.schedule, config.field,
                   [&](long step, double loss) {
                     metrics.rows.push_back({static_cast<double>(step), loss});
                   });

  save_checkpoint(join(config.out_dir, "behavior.ckpt"),
                  Checkpoint::for_field(params, config.schedule, config.seed));
  csv::write_table(join(config.out_dir, "pretrain_metrics.csv"), metrics);
  write_snapshot(config, snapshot);
}

void cmd_annotate(const RunConfig& config, const std::string& behavior_ckpt,
                  const std::string& snapshot) {
  config.validate();
  ensure_out_dir(config);
  ScalarFieldParams behavior = load_field_checkpoint(behavior_ckpt, config, true);
  BehaviorDataset dataset = resolve_dataset(config);

  CriticParams critic;
  QFn q = resolve_q_fn(config, dataset, &critic);
  if (config.critic_source == "learned") {
    save_checkpoint(join(config.out_dir, "critic.ckpt"),
                    Checkpoint::for_critic(critic, config.schedule, config.seed));
  }

  Mat states(config.align_states, config.field.state_dim);
  if (config.field.state_dim > 0) {
    Rng state_rng = Rng::substream(config.seed, "states");
    for (int i = 0; i < config.align_states; ++i) {
      states.row(i) = dataset.states.row(state_rng.uniform_int(static_cast<int>(dataset.size())));
    }
  }

  Rng rng = Rng::substream(config.seed, "annotate");
  auto records = build_alignment_dataset(behavior, states, q, config.align.K, config.sampler,
                                         config.schedule, rng);
  save_alignment_csv(join(config.out_dir, "alignment.csv"), records);
  write_snapshot(config, snapshot);
}

void cmd_finetune(const RunConfig& config, const std::string& behavior_ckpt,
                  const std::string& alignment_csv, double fraction, const std::string& snapshot) {
  config.validate();
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InputError("finetune: fraction must lie in (0, 1]");
  }
  ensure_out_dir(config);
  ScalarFieldParams behavior = load_field_checkpoint(behavior_ckpt, config, true);
  auto records = load_alignment_csv(alignment_csv);

  long keep = static_cast<long>(std::ceil(fraction * static_cast<double>(records.size())));
  keep = std::max<long>(1, std::min<long>(keep, static_cast<long>(records.size())));
  if (keep < static_cast<long>(records.size())) {
    Rng sub_rng = Rng::substream(config.seed, "subsample");
    std::vector<long> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<long>(i);
    for (size_t i = idx.size() - 1; i > 0; --i) {
      std::swap(idx[i], idx[static_cast<size_t>(sub_rng.uniform_int(static_cast<int>(i + 1)))]);
    }
    idx.resize(static_cast<size_t>(keep));
    std::sort(idx.begin(), idx.end());
    std::vector<AlignmentRecord> subset;
    subset.reserve(idx.size());
    for (long i : idx) subset.push_back(std::move(records[static_cast<size_t>(i)]));
    records = std::move(subset);
  }

  csv::Table metrics;
  metrics.comments.push_back("records_used=" + std::to_string(records.size()));
  metrics.header = {"step", "loss", "mean_implied_q"};
  AlignConfig align = config.align;
  align.seed = config.seed;
  ScalarFieldParams theta =
      finetune_run(behavior, records, align, config.schedule,
                   [&](long step, double loss, double miq) {
                     metrics.rows.push_back({static_cast<double>(step), loss, miq});
                   });

  save_checkpoint(join(config.out_dir, "policy.ckpt"),
                  Checkpoint::for_field(theta, config.schedule, config.seed));
  csv::write_table(join(config.out_dir, "finetune_metrics.csv"), metrics);
  write_snapshot(config, snapshot);
}

void cmd_sample(const RunConfig& config, const std::string& ckpt_path, int n, int best_of,
                const std::string& snapshot) {
  config.validate();
  if (n < 1) throw InputError("sample: n must be >= 1");
  if (best_of < 1) throw InputError("sample: best-of count must be >= 1");
  ensure_out_dir(config);
  ScalarFieldParams params = load_field_checkpoint(ckpt_path, config, false);

  BehaviorDataset dataset;  // only needed to fit a learned critic
  if (config.critic_source == "learned") dataset = resolve_dataset(config);
  QFn q = resolve_q_fn(config, dataset, nullptr);

  Rng rng = Rng::substream(config.seed, "sample");
  Mat states(n, params.config.state_dim);
  states.setZero();

  // Batched best-of-N: draw `best_of` full batches and keep the per-row
  // argmax under q; ties break to the earliest batch.
  Mat best = sample_batch(params, states, config.sampler, config.schedule, rng);
  Vec best_q(n);
  for (int i = 0; i < n; ++i) {
    best_q[i] = q(states.row(i).transpose(), best.row(i).transpose());
  }
  for (int c = 1; c < best_of; ++c) {
    Mat cand = sample_batch(params, states, config.sampler, config.schedule, rng);
    for (int i = 0; i < n; ++i) {
      double v = q(states.row(i).transpose(), cand.row(i).transpose());
      if (v > best_q[i]) {
        best_q[i] = v;
        best.row(i) = cand.row(i);
      }
    }
  }

  csv::Table t;
  for (int j = 0; j < params.config.action_dim; ++j) t.header.push_back("a" + std::to_string(j));
  t.header.push_back("q");
  for (int i = 0; i < n; ++i) {
    std::vector<double> row;
    for (int j = 0; j < params.config.action_dim; ++j) row.push_back(best(i, j));
    row.push_back(best_q[i]);
    t.rows.push_back(std::move(row));
  }
  csv::write_table(join(config.out_dir, "samples.csv"), t);
  write_snapshot(config, snapshot);
}

void cmd_grid(const RunConfig& config, const std::string& field_name, double t, int resolution,
              const std::string& behavior_ckpt, const std::string& policy_ckpt,
              const std::string& snapshot) {
  config.validate();
  ensure_out_dir(config);
  Bandit2DSpec spec = config.task_spec();

  DensityGrid grid;
  if (field_name == "behavior" || field_name == "policy") {
    const std::string& path = field_name == "behavior" ? behavior_ckpt : policy_ckpt;
    if (path.empty()) throw InputError("grid: " + field_name + " needs a checkpoint");
    ScalarFieldParams params = load_field_checkpoint(path, config, false);
    // Batched evaluation over all cells.
    grid = density_grid([](const Eigen::Vector2d&) { return 0.0; }, -4, 4, -4, 4, resolution);
    Mat cells(resolution * resolution, 2);
    for (int r = 0; r < resolution; ++r) {
      for (int c = 0; c < resolution; ++c) {
        cells.row(r * resolution + c) = grid.cell_center(r, c).transpose();
      }
    }
    Vec tv = Vec::Constant(cells.rows(), t);
    Vec values = field_values(params, cells, Mat(cells.rows(), 0), tv);
    for (int r = 0; r < resolution; ++r) {
      for (int c = 0; c < resolution; ++c) grid.values(r, c) = values[r * resolution + c];
    }
  } else if (field_name == "implied_q") {
    if (behavior_ckpt.empty() || policy_ckpt.empty()) {
      throw InputError("grid: implied_q needs behavior and policy checkpoints");
    }
    ScalarFieldParams phi = load_field_checkpoint(behavior_ckpt, config, false);
    ScalarFieldParams theta = load_field_checkpoint(policy_ckpt, config, false);
    grid = density_grid([](const Eigen::Vector2d&) { return 0.0; }, -4, 4, -4, 4, resolution);
    Mat cells(resolution * resolution, 2);
    for (int r = 0; r < resolution; ++r) {
      for (int c = 0; c < resolution; ++c) {
        cells.row(r * resolution + c) = grid.cell_center(r, c).transpose();
      }
    }
    Vec tv = Vec::Constant(cells.rows(), t);
    Vec f_phi = field_values(phi, cells, Mat(cells.rows(), 0), tv);
    Vec f_theta = field_values(theta, cells, Mat(cells.rows(), 0), tv);
    for (int r = 0; r < resolution; ++r) {
      for (int c = 0; c < resolution; ++c) {
        grid.values(r, c) =
            config.align.beta * (f_theta[r * resolution + c] - f_phi[r * resolution + c]);
      }
    }
  } else if (field_name == "true_q") {
    grid = density_grid([&](const Eigen::Vector2d& a) { return true_q(spec.qfield, a); }, -4, 4,
                        -4, 4, resolution);
  } else if (field_name == "density") {
    grid = density_grid([&](const Eigen::Vector2d& a) { return behavior_density(spec, a); }, -4, 4,
                        -4, 4, resolution);
  } else if (field_name == "tilted") {
    grid = tilted_density_grid(spec, config.align.beta, -4, 4, -4, 4, resolution);
  } else {
    throw InputError("grid: unknown field '" + field_name + "'");
  }

  std::string base = "grid_" + field_name + "_t" + format_t_tag(t);
  save_grid_csv(join(config.out_dir, base + ".csv"), grid);
  save_grid_pgm(join(config.out_dir, base + ".pgm"), grid);
  write_snapshot(config, snapshot);
}

int cmd_verify(const RunConfig& config, const std::string& suite, std::vector<VerifyRow>* rows_out,
               const std::string& snapshot) {
  config.validate();
  if (suite != "all" && suite != "clean" && suite != "smoothed" && suite != "optimality") {
    throw InputError("verify: unknown suite '" + suite + "'");
  }
  ensure_out_dir(config);
  std::vector<VerifyRow> rows;
  auto add = [&](const std::string& name, double value, double threshold,
                 const std::string& relation) {
    VerifyRow row{name, value, threshold, relation, true};
    if (relation == "<") row.pass = value < threshold;
    if (relation == ">") row.pass = value > threshold;
    rows.push_back(row);
  };

  oracle::DiscreteInstance inst = oracle::default_instance();

  if (suite == "all" || suite == "clean") {
    {
      oracle::DiscreteInstance small;
      small.actions = Vec(2);
      small.actions << -1.0, 1.0;
      small.mu = Vec(2);
      small.mu << 0.6, 0.4;
      small.q = Vec(2);
      small.q << 0.3, -0.8;
      small.K = 2;
      auto rep = oracle::clean_recovery_check(small);
      add("clean_recovery_m2_k2", rep.pairwise_diff_error, 1e-6, "<");
    }
    {
      // Seeded random 5-point instance, checked at K = 3.
      Rng rng(20240817);
      oracle::DiscreteInstance big;
      big.actions = Vec(5);
      big.actions << -2.0, -1.0, 0.0, 1.0, 2.0;
      big.mu = Vec(5);
      double total = 0.0;
      for (int i = 0; i < 5; ++i) {
        big.mu[i] = 0.2 + rng.uniform01();
        total += big.mu[i];
      }
      big.mu /= total;
      big.mu[4] = 1.0 - big.mu.head(4).sum();
      big.q = Vec(5);
      for (int i = 0; i < 5; ++i) big.q[i] = rng.uniform(-1.5, 1.5);
      big.K = 3;
      auto rep = oracle::clean_recovery_check(big);
      add("clean_recovery_m5_k3", rep.pairwise_diff_error, 1e-4, "<");
    }
    {
      // Shift invariance of the exact target.
      Vec shifted_q = inst.q.array() + 123.456;
      oracle::DiscreteInstance shifted = inst;
      shifted.q = shifted_q;
      double err = (oracle::exact_target(shifted) - oracle::exact_target(inst))
                       .cwiseAbs()
                       .maxCoeff();
      add("target_shift_invariance", err, 1e-12, "<");
    }
  }

  if (suite == "all" || suite == "smoothed") {
    auto mid = oracle::smoothed_q_check(inst, 0.5);
    add("smoothed_identity_t0.5", mid.identity_max_density_error, 1e-6, "<");
    add("smoothed_raw_tilt_tv_t0.5", mid.raw_tilt_tv, 1e-3, ">");
    rows.push_back({"smoothed_weighting_gap_t0.5", mid.weighting_gap, 0.0, "info", true});

    auto low = oracle::smoothed_q_check(inst, inst.schedule.t_min);
    add("smoothed_qt_vs_q_tmin", low.qt_atom_error, 1e-3, "<");

    auto high = oracle::smoothed_q_check(inst, 1.0);
    add("smoothed_identity_t1", high.identity_max_density_error, 1e-6, "<");
    rows.push_back({"smoothed_qt_constancy_t1", high.qt_constancy_dev, 0.0, "info", true});

    // The full-noise collapse to log E exp(q) holds to first order in
    // alpha(1); checked against a schedule whose alpha(1) is negligible.
    oracle::DiscreteInstance noisier = inst;
    noisier.schedule.beta_max = 40.0;
    auto full = oracle::smoothed_q_check(noisier, 1.0);
    add("smoothed_qt_constancy_full_noise", full.qt_constancy_dev, 1e-3, "<");
  }

  if (suite == "all" || suite == "optimality") {
    auto rep = oracle::alignment_optimality_check(inst, {0.25, 0.5, 1.0}, 2, 0, config.seed);
    add("optimality_clean_tv", rep.clean_tv, 1e-6, "<");
    for (const auto& row : rep.per_t) {
      add("optimality_exact_limit_tv_t" + format_t_tag(row.t), row.exact_limit_tv, 1e-6, "<");
    }
    double k2_tv = 0.0;
    for (const auto& row : rep.per_t) {
      if (row.t == 0.5) k2_tv = row.finite_k_tv;
    }
    auto big = oracle::alignment_optimality_check(inst, {0.5}, 1024, 2000, config.seed);
    add("optimality_finite_k2_tv_t0.5", k2_tv, big.per_t.front().finite_k_tv, ">");
    rows.push_back(
        {"optimality_finite_k1024_tv_t0.5", big.per_t.front().finite_k_tv, 0.0, "info", true});
  }

  int failures = 0;
  std::ofstream report(join(config.out_dir, "verify_report.csv"));
  if (!report) throw InputError("cannot write verify report in " + config.out_dir);
  report << "check,value,relation,threshold,pass\n";
  for (const auto& row : rows) {
    if (row.relation == "info") {
      std::printf("%-42s %14.8g   (informational)\n", row.name.c_str(), row.value);
    } else {
      std::printf("%-42s %14.8g   %s %-10g %s\n", row.name.c_str(), row.value,
                  row.relation.c_str(), row.threshold, row.pass ? "PASS" : "FAIL");
    }
    if (!row.pass) ++failures;
    report << row.name << ',' << csv::format_double(row.value) << ',' << row.relation << ','
           << csv::format_double(row.threshold) << ',' << (row.pass ? 1 : 0) << "\n";
  }
  write_snapshot(config, snapshot);
  if (rows_out) *rows_out = rows;
  return failures;
}

}  // namespace diffalign
