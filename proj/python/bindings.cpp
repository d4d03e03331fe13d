// Python bindings for the core operations: schedule math, scalar-field
// evaluation and training, sampling, alignment losses and fine-tuning, the
// 2D toy tasks, the expectile critic, brute-force verification, and
// checkpoint I/O.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "diffalign/alignment.hpp"
#include "diffalign/checkpoint.hpp"
#include "diffalign/critic.hpp"
#include "diffalign/envs2d.hpp"
#include "diffalign/errors.hpp"
#include "diffalign/oracle.hpp"
#include "diffalign/pipeline.hpp"
#include "diffalign/pretrain.hpp"
#include "diffalign/sampler.hpp"
#include "diffalign/scalar_field.hpp"
#include "diffalign/schedule.hpp"

namespace py = pybind11;
using namespace diffalign;

namespace {

QFn wrap_q(const py::function& fn) {
  return [fn](const Vec& s, const Vec& a) { return fn(s, a).cast<double>(); };
}

}  // namespace

PYBIND11_MODULE(_diffalign, m) {
  m.doc() = "Bottleneck diffusion behavior models with Q-value alignment";

  py::register_exception<Error>(m, "DiffalignError");

  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def(py::init<>())
      .def_readwrite("beta_min", &DiffusionSchedule::beta_min)
      .def_readwrite("beta_max", &DiffusionSchedule::beta_max)
      .def_readwrite("t_min", &DiffusionSchedule::t_min)
      .def("alpha_sigma", &DiffusionSchedule::alpha_sigma)
      .def("beta", &DiffusionSchedule::beta);
  m.def("perturb", &perturb, py::arg("schedule"), py::arg("action"), py::arg("t"),
        py::arg("noise"));

  py::class_<FieldConfig>(m, "FieldConfig")
      .def(py::init<>())
      .def_readwrite("action_dim", &FieldConfig::action_dim)
      .def_readwrite("state_dim", &FieldConfig::state_dim)
      .def_readwrite("time_embed_dim", &FieldConfig::time_embed_dim)
      .def_readwrite("width", &FieldConfig::width)
      .def_readwrite("blocks", &FieldConfig::blocks)
      .def_readwrite("dropout", &FieldConfig::dropout)
      .def_readwrite("ln_eps", &FieldConfig::ln_eps);

  py::class_<ScalarFieldParams>(m, "ScalarFieldParams")
      .def(py::init<>())
      .def_readwrite("config", &ScalarFieldParams::config)
      .def_property(
          "flat", [](const ScalarFieldParams& p) { return p.flat; },
          [](ScalarFieldParams& p, const std::vector<double>& v) { p.flat = v; });

  m.def("init_params", &init_params, py::arg("seed"), py::arg("config"));
  m.def("field_values", &field_values);
  m.def("field_input_gradients", &field_input_gradients);
  m.def("field_scores", &field_scores);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<BehaviorDataset>(m, "BehaviorDataset")
      .def(py::init<>())
      .def_readwrite("states", &BehaviorDataset::states)
      .def_readwrite("actions", &BehaviorDataset::actions)
      .def("size", &BehaviorDataset::size);
  m.def("load_behavior_csv", &load_behavior_csv);
  m.def("save_behavior_csv", &save_behavior_csv);

  m.def(
      "noise_prediction_loss",
      [](const ScalarFieldParams& p, const Mat& states, const Mat& actions,
         const DiffusionSchedule& sch, std::uint64_t seed) {
        Rng rng(seed);
        LossResult r = noise_prediction_loss(p, states, actions, sch, rng);
        return py::make_tuple(r.loss, r.grad);
      },
      py::arg("params"), py::arg("states"), py::arg("actions"), py::arg("schedule"),
      py::arg("seed"));

  m.def(
      "pretrain_run",
      [](const BehaviorDataset& ds, const TrainConfig& cfg, const DiffusionSchedule& sch,
         const FieldConfig& field, const py::object& sink) {
        MetricsSink cb = nullptr;
        if (!sink.is_none()) {
          auto fn = sink.cast<py::function>();
          cb = [fn](long step, double loss) { fn(step, loss); };
        }
        return pretrain_run(ds, cfg, sch, field, cb);
      },
      py::arg("dataset"), py::arg("config"), py::arg("schedule"), py::arg("field"),
      py::arg("sink") = py::none());

  py::class_<SamplerConfig>(m, "SamplerConfig")
      .def(py::init<>())
      .def_readwrite("steps", &SamplerConfig::steps);

  m.def(
      "sample_batch",
      [](const ScalarFieldParams& p, const Mat& states, const SamplerConfig& cfg,
         const DiffusionSchedule& sch, std::uint64_t seed) {
        Rng rng(seed);
        return sample_batch(p, states, cfg, sch, rng);
      },
      py::arg("params"), py::arg("states"), py::arg("config"), py::arg("schedule"),
      py::arg("seed"));

  m.def(
      "rejection_sample",
      [](const ScalarFieldParams& p, const Vec& state, const py::function& q, int n,
         const SamplerConfig& cfg, const DiffusionSchedule& sch, std::uint64_t seed) {
        Rng rng(seed);
        return rejection_sample(p, state, wrap_q(q), n, cfg, sch, rng);
      },
      py::arg("params"), py::arg("state"), py::arg("q"), py::arg("n_candidates"),
      py::arg("config"), py::arg("schedule"), py::arg("seed"));

  py::class_<AlignmentRecord>(m, "AlignmentRecord")
      .def(py::init<>())
      .def_readwrite("state", &AlignmentRecord::state)
      .def_readwrite("actions", &AlignmentRecord::actions)
      .def_readwrite("q", &AlignmentRecord::q);

  py::enum_<AlignMode>(m, "AlignMode")
      .value("VALUE", AlignMode::kValue)
      .value("PREFERENCE", AlignMode::kPreference)
      .value("DPO", AlignMode::kDpo);

  py::class_<AlignConfig>(m, "AlignConfig")
      .def(py::init<>())
      .def_readwrite("beta", &AlignConfig::beta)
      .def_readwrite("K", &AlignConfig::K)
      .def_readwrite("mode", &AlignConfig::mode)
      .def_readwrite("lr", &AlignConfig::lr)
      .def_readwrite("steps", &AlignConfig::steps)
      .def_readwrite("batch", &AlignConfig::batch)
      .def_readwrite("seed", &AlignConfig::seed);

  m.def(
      "build_alignment_dataset",
      [](const ScalarFieldParams& behavior, const Mat& states, const py::function& q, int K,
         const SamplerConfig& cfg, const DiffusionSchedule& sch, std::uint64_t seed) {
        Rng rng(seed);
        return build_alignment_dataset(behavior, states, wrap_q(q), K, cfg, sch, rng);
      },
      py::arg("behavior"), py::arg("states"), py::arg("q"), py::arg("K"), py::arg("config"),
      py::arg("schedule"), py::arg("seed"));

  m.def("optimality_probability", &optimality_probability);

  m.def(
      "value_alignment_loss",
      [](const ScalarFieldParams& theta, const ScalarFieldParams& phi,
         const std::vector<AlignmentRecord>& records, double beta, const DiffusionSchedule& sch,
         std::uint64_t seed) {
        Rng rng(seed);
        auto r = value_alignment_loss(theta, phi, records, beta, sch, rng);
        return py::make_tuple(r.loss, r.grad, r.mean_implied_q);
      });
  m.def(
      "preference_alignment_loss",
      [](const ScalarFieldParams& theta, const ScalarFieldParams& phi,
         const std::vector<AlignmentRecord>& records, double beta, const DiffusionSchedule& sch,
         std::uint64_t seed) {
        Rng rng(seed);
        auto r = preference_alignment_loss(theta, phi, records, beta, sch, rng);
        return py::make_tuple(r.loss, r.grad, r.mean_implied_q);
      });

  m.def(
      "finetune_run",
      [](const ScalarFieldParams& behavior, const std::vector<AlignmentRecord>& records,
         const AlignConfig& cfg, const DiffusionSchedule& sch, const py::object& sink) {
        FinetuneSink cb = nullptr;
        if (!sink.is_none()) {
          auto fn = sink.cast<py::function>();
          cb = [fn](long step, double loss, double miq) { fn(step, loss, miq); };
        }
        return finetune_run(behavior, records, cfg, sch, cb);
      },
      py::arg("behavior"), py::arg("records"), py::arg("config"), py::arg("schedule"),
      py::arg("sink") = py::none());

  m.def("implied_q", &implied_q);
  m.def("save_alignment_csv", &save_alignment_csv);
  m.def("load_alignment_csv", &load_alignment_csv);

  py::enum_<Dist2D>(m, "Dist2D")
      .value("EIGHT_GAUSSIANS", Dist2D::kEightGaussians)
      .value("SWISS_ROLL", Dist2D::kSwissRoll)
      .value("MOONS", Dist2D::kMoons)
      .value("GAUSSIAN", Dist2D::kGaussian);

  py::class_<QField>(m, "QField")
      .def(py::init<>())
      .def_readwrite("kind", &QField::kind)
      .def_readwrite("center", &QField::center)
      .def_readwrite("scale", &QField::scale);

  py::enum_<QField::Kind>(m, "QFieldKind")
      .value("LINEAR_X", QField::Kind::kLinearX)
      .value("RADIAL", QField::Kind::kRadial)
      .value("ANGULAR", QField::Kind::kAngular)
      .value("RADIUS", QField::Kind::kRadius);

  py::class_<Bandit2DSpec>(m, "Bandit2DSpec")
      .def(py::init<>())
      .def_readwrite("dist", &Bandit2DSpec::dist)
      .def_readwrite("count", &Bandit2DSpec::count)
      .def_readwrite("noise", &Bandit2DSpec::noise)
      .def_readwrite("qfield", &Bandit2DSpec::qfield)
      .def_readwrite("seed", &Bandit2DSpec::seed);

  m.def("generate", &generate);
  m.def("true_q", &true_q);
  m.def("default_qfield", &default_qfield);
  m.def("behavior_density", &behavior_density);
  m.def("tilted_pmf", &tilted_pmf);

  py::class_<DensityGrid>(m, "DensityGrid")
      .def(py::init<>())
      .def_readwrite("xmin", &DensityGrid::xmin)
      .def_readwrite("xmax", &DensityGrid::xmax)
      .def_readwrite("ymin", &DensityGrid::ymin)
      .def_readwrite("ymax", &DensityGrid::ymax)
      .def_readwrite("resolution", &DensityGrid::resolution)
      .def_readwrite("values", &DensityGrid::values)
      .def("cell_area", &DensityGrid::cell_area);

  m.def("density_grid",
        [](const py::function& f, double xmin, double xmax, double ymin, double ymax, int res) {
          return density_grid(
              [f](const Eigen::Vector2d& a) { return f(a).cast<double>(); }, xmin, xmax, ymin,
              ymax, res);
        });
  m.def("tilted_density_grid", &tilted_density_grid);
  m.def("save_grid_csv", &save_grid_csv);
  m.def("load_grid_csv", &load_grid_csv);
  m.def("save_grid_pgm", &save_grid_pgm);

  py::class_<CriticParams>(m, "CriticParams")
      .def(py::init<>())
      .def_readwrite("state_dim", &CriticParams::state_dim)
      .def_readwrite("action_dim", &CriticParams::action_dim)
      .def_readwrite("width", &CriticParams::width)
      .def_readwrite("hidden_layers", &CriticParams::hidden_layers)
      .def_readwrite("flat", &CriticParams::flat);

  py::class_<CriticTrainConfig>(m, "CriticTrainConfig")
      .def(py::init<>())
      .def_readwrite("tau", &CriticTrainConfig::tau)
      .def_readwrite("steps", &CriticTrainConfig::steps)
      .def_readwrite("batch", &CriticTrainConfig::batch)
      .def_readwrite("lr", &CriticTrainConfig::lr)
      .def_readwrite("width", &CriticTrainConfig::width)
      .def_readwrite("seed", &CriticTrainConfig::seed);

  m.def("train_expectile_critic", &train_expectile_critic);
  m.def("critic_values", &critic_values);

  py::class_<oracle::DiscreteInstance>(m, "DiscreteInstance")
      .def(py::init<>())
      .def_readwrite("actions", &oracle::DiscreteInstance::actions)
      .def_readwrite("mu", &oracle::DiscreteInstance::mu)
      .def_readwrite("q", &oracle::DiscreteInstance::q)
      .def_readwrite("schedule", &oracle::DiscreteInstance::schedule)
      .def_readwrite("beta", &oracle::DiscreteInstance::beta)
      .def_readwrite("K", &oracle::DiscreteInstance::K);

  m.def("default_instance", &oracle::default_instance);
  m.def("exact_target", &oracle::exact_target);

  py::class_<oracle::RecoveryReport>(m, "RecoveryReport")
      .def_readonly("pairwise_diff_error", &oracle::RecoveryReport::pairwise_diff_error)
      .def_readonly("grad_norm", &oracle::RecoveryReport::grad_norm)
      .def_readonly("iterations", &oracle::RecoveryReport::iterations)
      .def_readonly("converged", &oracle::RecoveryReport::converged)
      .def_readonly("table", &oracle::RecoveryReport::table);
  m.def("clean_recovery_check", &oracle::clean_recovery_check, py::arg("instance"),
        py::arg("max_iters") = 60000);

  py::class_<oracle::SmoothedQReport>(m, "SmoothedQReport")
      .def_readonly("t", &oracle::SmoothedQReport::t)
      .def_readonly("mass_deficit", &oracle::SmoothedQReport::mass_deficit)
      .def_readonly("identity_max_density_error",
                    &oracle::SmoothedQReport::identity_max_density_error)
      .def_readonly("qt_atom_error", &oracle::SmoothedQReport::qt_atom_error)
      .def_readonly("qt_constancy_dev", &oracle::SmoothedQReport::qt_constancy_dev)
      .def_readonly("raw_tilt_tv", &oracle::SmoothedQReport::raw_tilt_tv)
      .def_readonly("weighting_gap", &oracle::SmoothedQReport::weighting_gap);
  m.def("smoothed_q_check", &oracle::smoothed_q_check);

  py::class_<oracle::OptimalityReport::PerT>(m, "OptimalityPerT")
      .def_readonly("t", &oracle::OptimalityReport::PerT::t)
      .def_readonly("exact_limit_tv", &oracle::OptimalityReport::PerT::exact_limit_tv)
      .def_readonly("finite_k_tv", &oracle::OptimalityReport::PerT::finite_k_tv);
  py::class_<oracle::OptimalityReport>(m, "OptimalityReport")
      .def_readonly("clean_tv", &oracle::OptimalityReport::clean_tv)
      .def_readonly("per_t", &oracle::OptimalityReport::per_t)
      .def_readonly("finite_k", &oracle::OptimalityReport::finite_k);
  m.def("alignment_optimality_check", &oracle::alignment_optimality_check, py::arg("instance"),
        py::arg("t_grid"), py::arg("finite_k"), py::arg("mc_trials"), py::arg("seed") = 1);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("for_field", &Checkpoint::for_field)
      .def_static("for_critic", &Checkpoint::for_critic)
      .def("to_field", &Checkpoint::to_field)
      .def("to_critic", &Checkpoint::to_critic)
      .def_readwrite("kind", &Checkpoint::kind)
      .def_readwrite("seed", &Checkpoint::seed)
      .def_readwrite("schedule", &Checkpoint::schedule)
      .def_readwrite("flat", &Checkpoint::flat);
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);
}
