// diffalign command line front end.
//
// Subcommands: pretrain, annotate, finetune, sample, grid, verify. Every
// subcommand accepts --config <file> (INI-style key = value with sections)
// plus per-option overrides, and writes its artifacts into the configured
// run directory together with a reloadable config snapshot.
//
// Exit codes: 0 success, 1 internal/training error, 2 input or config
// error, 3 checkpoint mismatch.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "diffalign/errors.hpp"
#include "diffalign/pipeline.hpp"

namespace {

using diffalign::RunConfig;

struct CliState {
  RunConfig config;
  std::string behavior_ckpt;
  std::string policy_ckpt;
  std::string alignment_csv;
  double fraction = 1.0;
  int n_samples = 1000;
  int best_of = 1;
  std::string grid_field = "behavior";
  double grid_t = 0.0;
  int grid_resolution = 64;
  std::string suite = "all";
};

void add_run_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->set_config("--config", "", "INI config file (key = value with [sections])");

  auto* task = cmd->add_option_group("task");
  task->add_option("--task.distribution", cfg.distribution,
                   "behavior dataset: 8gaussians | swissroll | moons | gaussian");
  task->add_option("--task.count", cfg.count, "behavior sample count");
  task->add_option("--task.noise", cfg.noise, "generator noise scale");
  task->add_option("--task.qfield", cfg.qfield,
                   "auto | linear | radial | angular | radius");
  task->add_option("--task.data", cfg.data_csv, "behavior CSV path (overrides the generator)");

  auto* sched = cmd->add_option_group("schedule");
  sched->add_option("--schedule.beta_min", cfg.schedule.beta_min);
  sched->add_option("--schedule.beta_max", cfg.schedule.beta_max);
  sched->add_option("--schedule.t_min", cfg.schedule.t_min);

  auto* field = cmd->add_option_group("field");
  field->add_option("--field.action_dim", cfg.field.action_dim);
  field->add_option("--field.state_dim", cfg.field.state_dim);
  field->add_option("--field.time_embed_dim", cfg.field.time_embed_dim);
  field->add_option("--field.width", cfg.field.width);
  field->add_option("--field.blocks", cfg.field.blocks);
  field->add_option("--field.ln_eps", cfg.field.ln_eps);

  auto* pre = cmd->add_option_group("pretrain");
  pre->add_option("--pretrain.steps", cfg.pretrain.steps);
  pre->add_option("--pretrain.batch", cfg.pretrain.batch);
  pre->add_option("--pretrain.lr", cfg.pretrain.lr);
  pre->add_option("--pretrain.adam_beta1", cfg.pretrain.adam_beta1);
  pre->add_option("--pretrain.adam_beta2", cfg.pretrain.adam_beta2);
  pre->add_option("--pretrain.dropout", cfg.pretrain.dropout);

  auto* align = cmd->add_option_group("align");
  align->add_option_function<std::string>(
      "--align.mode",
      [&cfg](const std::string& v) { cfg.align.mode = diffalign::parse_align_mode(v); },
      "value | preference | dpo");
  align->add_option("--align.beta", cfg.align.beta, "tilt temperature");
  align->add_option("--align.K", cfg.align.K, "contrastive candidates per record");
  align->add_option("--align.lr", cfg.align.lr);
  align->add_option("--align.steps", cfg.align.steps);
  align->add_option("--align.batch", cfg.align.batch);
  align->add_option("--align.states", cfg.align_states, "alignment records to annotate");

  auto* sampler = cmd->add_option_group("sampler");
  sampler->add_option("--sampler.steps", cfg.sampler.steps, "reverse integration steps");

  auto* critic = cmd->add_option_group("critic");
  critic->add_option("--critic.source", cfg.critic_source, "analytic | learned");
  critic->add_option("--critic.tau", cfg.critic.tau, "expectile");
  critic->add_option("--critic.steps", cfg.critic.steps);
  critic->add_option("--critic.batch", cfg.critic.batch);
  critic->add_option("--critic.lr", cfg.critic.lr);
  critic->add_option("--critic.width", cfg.critic.width);
  critic->add_option("--critic.reward_noise", cfg.reward_noise);

  auto* run = cmd->add_option_group("run");
  run->add_option("--seed", cfg.seed, "global seed; all substreams derive from it");
  run->add_option("--out-dir", cfg.out_dir, "run directory")->envname("DIFFALIGN_OUT_DIR");
}

std::string snapshot_of(CLI::App* cmd) { return cmd->config_to_str(true, true); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bottleneck diffusion behavior models with Q-value alignment"};
  app.require_subcommand(1);
  CliState st;

  auto* pretrain = app.add_subcommand("pretrain", "fit the behavior field on reward-free data");
  add_run_options(pretrain, st.config);

  auto* annotate =
      app.add_subcommand("annotate", "draw K candidates per state and attach Q-values");
  add_run_options(annotate, st.config);
  annotate->add_option("--ckpt", st.behavior_ckpt, "behavior checkpoint")->required();

  auto* finetune = app.add_subcommand("finetune", "align the policy field with Q annotations");
  add_run_options(finetune, st.config);
  finetune->add_option("--ckpt", st.behavior_ckpt, "behavior checkpoint")->required();
  finetune->add_option("--data", st.alignment_csv, "alignment dataset CSV")->required();
  finetune->add_option("--fraction", st.fraction, "record fraction in (0, 1]");

  auto* sample = app.add_subcommand("sample", "draw actions from a trained field");
  add_run_options(sample, st.config);
  sample->add_option("--ckpt", st.policy_ckpt, "field checkpoint")->required();
  sample->add_option("--n", st.n_samples, "sample count");
  sample->add_option("--best-of", st.best_of, "rejection sampling candidates");

  auto* grid = app.add_subcommand("grid", "export a field over the action box as CSV + PGM");
  add_run_options(grid, st.config);
  grid->add_option("--field", st.grid_field,
                   "behavior | policy | implied_q | true_q | density | tilted");
  grid->add_option("--t", st.grid_t, "diffusion time");
  grid->add_option("--res", st.grid_resolution, "grid resolution");
  grid->add_option("--behavior-ckpt", st.behavior_ckpt);
  grid->add_option("--policy-ckpt", st.policy_ckpt);
  grid->add_option("--ckpt", st.behavior_ckpt, "alias for --behavior-ckpt");

  auto* verify = app.add_subcommand("verify", "run the brute-force verification suite");
  add_run_options(verify, st.config);
  verify->add_option("--suite", st.suite, "all | clean | smoothed | optimality");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (pretrain->parsed()) {
      diffalign::cmd_pretrain(st.config, snapshot_of(pretrain));
    } else if (annotate->parsed()) {
      diffalign::cmd_annotate(st.config, st.behavior_ckpt, snapshot_of(annotate));
    } else if (finetune->parsed()) {
      diffalign::cmd_finetune(st.config, st.behavior_ckpt, st.alignment_csv, st.fraction,
                              snapshot_of(finetune));
    } else if (sample->parsed()) {
      diffalign::cmd_sample(st.config, st.policy_ckpt, st.n_samples, st.best_of,
                            snapshot_of(sample));
    } else if (grid->parsed()) {
      diffalign::cmd_grid(st.config, st.grid_field, st.grid_t, st.grid_resolution,
                          st.behavior_ckpt, st.policy_ckpt, snapshot_of(grid));
    } else if (verify->parsed()) {
      int failures = diffalign::cmd_verify(st.config, st.suite, nullptr, snapshot_of(verify));
      if (failures > 0) {
        std::fprintf(stderr, "verify: %d check(s) failed\n", failures);
        return 1;
      }
    }
  } catch (const diffalign::CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const diffalign::InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const diffalign::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
