#pragma once

#include <Eigen/Core>
#include <vector>

#include "diffalign/schedule.hpp"

namespace diffalign::oracle {

using Vec = Eigen::VectorXd;

// Finite 1D instance: a grid of actions with a behavior pmf and Q-values.
// Everything in this module is brute-force numerics on such instances; no
// neural code path is involved, so these checks can falsify the main
// implementation.
struct DiscreteInstance {
  Vec actions;  // strictly increasing grid points
  Vec mu;       // behavior pmf, sums to one
  Vec q;
  DiffusionSchedule schedule;
  double beta = 1.0;
  int K = 2;

  int size() const { return static_cast<int>(actions.size()); }
  void validate() const;
};

// The tilted policy mu_i * exp(q_i / beta), normalized.
Vec exact_target(const DiscreteInstance& instance);

// K-way contrastive cross-entropy objective over clean actions, evaluated in
// exact expectation (all M^K ordered tuples): the average over tuples of
// sum_k softmax(q)_k * log softmax(table)_k.
double kway_objective(const DiscreteInstance& instance, const Vec& table);

// Maximizes kway_objective over a free table by exact-expectation gradient
// ascent. At the optimum the table matches q up to one additive constant;
// the report carries the worst pairwise-difference error.
struct RecoveryReport {
  double pairwise_diff_error = 0.0;
  double grad_norm = 0.0;
  long iterations = 0;
  bool converged = false;
  Vec table;
};

RecoveryReport clean_recovery_check(const DiscreteInstance& instance, long max_iters = 60000);

// Noisy-action identities at one diffusion time, via discretized Gaussian
// kernels on a fine grid (spacing sigma_t / 8 over [-6, 6]):
//
//   smoothed_q(x)   = log E[ exp(q / beta) | a_t = x ]   (posterior over atoms)
//   diffuse(target) = tilt(diffused behavior, smoothed_q)   -- exact identity
//
// Also reports how the smoothed Q behaves at the two ends of the time range,
// the failure of tilting by raw Q, and the gap between the optimum under
// tuple-normalized (softmax) weights and exponential weights at K = 2.
struct SmoothedQReport {
  double t = 0.0;
  double alpha = 0.0;
  double sigma = 0.0;
  int grid_size = 0;
  double mass_deficit = 0.0;
  double identity_max_density_error = 0.0;
  double qt_atom_error = 0.0;      // smoothed Q at diffused atoms vs q / beta
  double qt_constancy_dev = 0.0;   // deviation from log E exp(q / beta) on the mass region
  double raw_tilt_tv = 0.0;        // TV error when tilting mu_t by raw q
  double weighting_gap = 0.0;      // NaN when the grid is too large to optimize
};

SmoothedQReport smoothed_q_check(const DiscreteInstance& instance, double t);

// End-to-end check of the alignment objective's optimum.
//
// Clean part: optimizing the K-way objective at t = 0 and tilting the
// behavior pmf by exp(table / beta) recovers the exact target.
//
// Noisy part (requires beta = 1): for each t, a free per-cell table is
// optimized against the noisy objective; under exponential weights (the
// large-K limit of the tuple softmax) the recovered distribution matches the
// exactly-diffused target, while the finite-K softmax weighting shows a bias
// that shrinks as K grows. finite_k = 2 is enumerated exactly; larger K uses
// a fixed sample of `mc_trials` tuples (deterministic given `seed`).
struct OptimalityReport {
  double clean_tv = 0.0;
  struct PerT {
    double t = 0.0;
    double exact_limit_tv = 0.0;
    double finite_k_tv = 0.0;
  };
  std::vector<PerT> per_t;
  int finite_k = 2;
};

OptimalityReport alignment_optimality_check(const DiscreteInstance& instance,
                                            const std::vector<double>& t_grid, int finite_k,
                                            long mc_trials, std::uint64_t seed = 1);

double total_variation(const Vec& p, const Vec& q);

// Default instance used by the verification suite: M = 3 atoms at -1, 0, 1
// with mu = (0.5, 0.3, 0.2) and q = (0, 1, 2).
DiscreteInstance default_instance();

}  // namespace diffalign::oracle
