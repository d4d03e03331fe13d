#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffalign/alignment.hpp"
#include "diffalign/critic.hpp"
#include "diffalign/envs2d.hpp"
#include "diffalign/pretrain.hpp"
#include "diffalign/sampler.hpp"
#include "diffalign/schedule.hpp"

namespace diffalign {

// Full run configuration, mirrored one-to-one by the CLI's config file
// sections. All randomness in a run flows from `seed` through named
// substreams.
struct RunConfig {
  // [task]
  std::string distribution = "8gaussians";
  int count = 50000;
  double noise = 0.2;
  std::string qfield = "auto";  // auto | linear | radial | angular | radius
  std::string data_csv;         // when set, load instead of generating

  // [schedule]
  DiffusionSchedule schedule;

  // [field]
  FieldConfig field;

  // [pretrain]
  TrainConfig pretrain;

  // [align]
  AlignConfig align;
  int align_states = 2000;  // alignment records to annotate

  // [sampler]
  SamplerConfig sampler;

  // [critic]
  std::string critic_source = "analytic";  // analytic | learned
  CriticTrainConfig critic;
  double reward_noise = 0.1;  // synthetic reward noise for the learned critic

  // [run]
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";

  void validate() const;
  Bandit2DSpec task_spec() const;
};

// Resolves the configured Q annotation source. The learned variant fits an
// expectile critic on synthetic rewards (true Q plus noise) over the
// behavior dataset's actions and is deterministic given the run seed.
QFn resolve_q_fn(const RunConfig& config, const BehaviorDataset& dataset,
                 CriticParams* trained_out = nullptr);

BehaviorDataset resolve_dataset(const RunConfig& config);

// Command bodies behind the CLI. Each writes its artifacts with stable names
// into config.out_dir and also persists `snapshot` (the resolved config text)
// as config.snapshot when non-empty.
void cmd_pretrain(const RunConfig& config, const std::string& snapshot = "");
void cmd_annotate(const RunConfig& config, const std::string& behavior_ckpt,
                  const std::string& snapshot = "");
void cmd_finetune(const RunConfig& config, const std::string& behavior_ckpt,
                  const std::string& alignment_csv, double fraction,
                  const std::string& snapshot = "");
void cmd_sample(const RunConfig& config, const std::string& ckpt_path, int n, int best_of,
                const std::string& snapshot = "");
void cmd_grid(const RunConfig& config, const std::string& field_name, double t, int resolution,
              const std::string& behavior_ckpt, const std::string& policy_ckpt,
              const std::string& snapshot = "");

struct VerifyRow {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<" or ">"; "info" rows always pass
  bool pass = true;
};

// Runs the brute-force verification suite ("clean", "smoothed", "optimality"
// or "all") and writes verify_report.csv. Returns the failing row count.
int cmd_verify(const RunConfig& config, const std::string& suite,
               std::vector<VerifyRow>* rows_out = nullptr, const std::string& snapshot = "");

}  // namespace diffalign
