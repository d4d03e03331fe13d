#include "diffalign/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diffalign/errors.hpp"
#include "diffalign/optimizer.hpp"
#include "diffalign/rng.hpp"

namespace diffalign::oracle {

namespace {

Vec softmax(const Vec& z) {
  double m = z.maxCoeff();
  Vec e = (z.array() - m).exp();
  return e / e.sum();
}

// Odometer over all M^K ordered index tuples.
template <typename F>
void for_each_tuple(int m, int k, F&& fn) {
  std::vector<int> idx(static_cast<size_t>(k), 0);
  while (true) {
    fn(idx);
    int pos = k - 1;
    while (pos >= 0) {
      if (++idx[static_cast<size_t>(pos)] < m) break;
      idx[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
}

// Ascent with a staged step size; the objectives here are concave and
// smooth, so Adam with a decaying rate converges tightly.
struct Ascent {
  Adam adam;
  std::vector<double>* table;
  explicit Ascent(std::vector<double>& t, double lr) : adam(t.size(), lr), table(&t) {}
  void step(std::vector<double> grad) {
    for (double& g : grad) g = -g;  // Adam minimizes
    adam.step(*table, grad);
  }
};

struct GridKernel {
  Vec x;            // cell centers
  double spacing = 0.0;
  Eigen::MatrixXd kappa;  // [M, G], rows normalized to sum to one
  Vec m;            // diffused behavior pmf on cells
  Vec u;            // sum_i mu_i kappa(j|i) exp(q_i / beta)
  double mass_deficit = 0.0;
};

GridKernel build_kernel(const DiscreteInstance& inst, double t) {
  auto [alpha, sigma] = inst.schedule.alpha_sigma(t);
  if (!(sigma > 0.0)) throw InputError("oracle: t too small, sigma vanishes");
  const double lo = -6.0, hi = 6.0;
  double spacing = sigma / 8.0;
  int g = static_cast<int>(std::ceil((hi - lo) / spacing));
  GridKernel k;
  k.spacing = (hi - lo) / g;
  k.x.resize(g);
  for (int j = 0; j < g; ++j) k.x[j] = lo + (j + 0.5) * k.spacing;

  const int m = inst.size();
  k.kappa.resize(m, g);
  double worst = 0.0;
  for (int i = 0; i < m; ++i) {
    double mean = alpha * inst.actions[i];
    double mass = 0.0;
    for (int j = 0; j < g; ++j) {
      double z = (k.x[j] - mean) / sigma;
      double dens = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
      k.kappa(i, j) = dens * k.spacing;
      mass += k.kappa(i, j);
    }
    worst = std::max(worst, std::abs(1.0 - mass));
    k.kappa.row(i) /= mass;
  }
  k.mass_deficit = worst;
  if (worst > 1e-4) {
    throw InputError("oracle: quadrature grid too coarse, mass deficit " + std::to_string(worst));
  }

  k.m = Vec::Zero(g);
  k.u = Vec::Zero(g);
  for (int i = 0; i < m; ++i) {
    double w = std::exp(inst.q[i] / inst.beta - inst.q.maxCoeff() / inst.beta);
    k.m += inst.mu[i] * k.kappa.row(i).transpose();
    k.u += inst.mu[i] * w * k.kappa.row(i).transpose();
  }
  return k;
}

// Optimum of the exponential-weight pairwise objective over per-cell logits.
// Initialized at zero and ascended in exact expectation: an Adam warmup to
// get near the optimum, then monitored plain gradient ascent, which has no
// step-size oscillation and polishes the mass-relevant cells geometrically.
Vec optimize_exponential_table(const GridKernel& k, long max_iters) {
  const int g = static_cast<int>(k.x.size());
  std::vector<double> table(static_cast<size_t>(g), 0.0);

  auto objective_and_grad = [&](std::vector<double>* grad) {
    if (grad) grad->assign(static_cast<size_t>(g), 0.0);
    double obj = 0.0;
    for (int j1 = 0; j1 < g; ++j1) {
      if (k.u[j1] <= 0.0 && k.m[j1] <= 0.0) continue;
      for (int j2 = 0; j2 < g; ++j2) {
        double c = k.u[j1] * k.m[j2];
        if (c <= 0.0) continue;
        double d = table[static_cast<size_t>(j1)] - table[static_cast<size_t>(j2)];
        double s2 = 1.0 / (1.0 + std::exp(d));
        obj += c * (d >= 0.0 ? -std::log1p(std::exp(-d)) : d - std::log1p(std::exp(d)));
        if (grad) {
          (*grad)[static_cast<size_t>(j1)] += c * s2;
          (*grad)[static_cast<size_t>(j2)] -= c * s2;
        }
      }
    }
    return obj;
  };

  const long warmup = std::min<long>(1000, max_iters / 2);
  Ascent adam(table, 0.3);
  std::vector<double> grad;
  for (long it = 0; it < warmup; ++it) {
    objective_and_grad(&grad);
    adam.step(grad);
  }

  double lr = 2.0;
  double last_obj = objective_and_grad(nullptr);
  for (long it = warmup; it < max_iters; ++it) {
    double obj = objective_and_grad(&grad);
    if (obj < last_obj && lr > 0.25) lr *= 0.5;  // overshoot guard
    last_obj = obj;
    double gmax = 0.0;
    for (int j = 0; j < g; ++j) {
      table[static_cast<size_t>(j)] += lr * grad[static_cast<size_t>(j)];
      gmax = std::max(gmax, std::abs(grad[static_cast<size_t>(j)]));
    }
    if (gmax < 1e-14) break;
  }

  Vec out(g);
  for (int j = 0; j < g; ++j) out[j] = table[static_cast<size_t>(j)];
  return out;
}

// Finite-K pairwise objective with tuple-softmax weights, enumerated exactly.
Vec optimize_pairwise_softmax_table(const DiscreteInstance& inst, const GridKernel& k,
                                    long max_iters) {
  const int g = static_cast<int>(k.x.size());
  const int m = inst.size();
  std::vector<double> table(static_cast<size_t>(g), 0.0);
  const long stage = std::max<long>(1, max_iters / 3);
  double lrs[3] = {0.3, 0.05, 0.01};
  for (int phase = 0; phase < 3; ++phase) {
    Ascent opt(table, lrs[phase]);
    for (long it = 0; it < stage; ++it) {
      std::vector<double> grad(static_cast<size_t>(g), 0.0);
      for (int i1 = 0; i1 < m; ++i1) {
        for (int i2 = 0; i2 < m; ++i2) {
          double pw = inst.mu[i1] * inst.mu[i2];
          double w1 = 1.0 / (1.0 + std::exp(inst.q[i2] - inst.q[i1]));
          for (int j1 = 0; j1 < g; ++j1) {
            double pj1 = pw * k.kappa(i1, j1);
            if (pj1 <= 0.0) continue;
            for (int j2 = 0; j2 < g; ++j2) {
              double p = pj1 * k.kappa(i2, j2);
              if (p <= 0.0) continue;
              double s1 = 1.0 / (1.0 + std::exp(table[static_cast<size_t>(j2)] -
                                                table[static_cast<size_t>(j1)]));
              grad[static_cast<size_t>(j1)] += p * (w1 - s1);
              grad[static_cast<size_t>(j2)] += p * ((1.0 - w1) - (1.0 - s1));
            }
          }
        }
      }
      opt.step(std::move(grad));
    }
  }
  Vec out(g);
  for (int j = 0; j < g; ++j) out[j] = table[static_cast<size_t>(j)];
  return out;
}

// Sample-average version for K too large to enumerate. The tuple sample is
// drawn once, then the deterministic SAA objective is ascended.
Vec optimize_mc_softmax_table(const DiscreteInstance& inst, const GridKernel& k, int big_k,
                              long trials, std::uint64_t seed, long max_iters) {
  const int g = static_cast<int>(k.x.size());
  const int m = inst.size();
  Rng rng(seed);

  // Inverse-CDF tables for atom and per-atom cell draws.
  Vec mu_cdf(m);
  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    acc += inst.mu[i];
    mu_cdf[i] = acc;
  }
  // Column-major [G, M] so each atom's CDF is contiguous.
  Eigen::MatrixXd cell_cdf(g, m);
  for (int i = 0; i < m; ++i) {
    double c = 0.0;
    for (int j = 0; j < g; ++j) {
      c += k.kappa(i, j);
      cell_cdf(j, i) = c;
    }
  }
  auto draw_index = [&](const double* cdf, int n) {
    double u = rng.uniform01();
    int lo = 0, hi = n - 1;
    while (lo < hi) {
      int mid = (lo + hi) / 2;
      if (cdf[mid] < u) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    return lo;
  };

  // tuples[s] holds K (weight, cell) pairs; the softmax over atom Qs is
  // precomputed since the atoms never change during ascent.
  struct Member {
    int cell;
    double weight;
  };
  std::vector<std::vector<Member>> tuples(static_cast<size_t>(trials));
  std::vector<double> qbuf(static_cast<size_t>(big_k));
  std::vector<int> cells(static_cast<size_t>(big_k));
  for (long s = 0; s < trials; ++s) {
    double qmax = -std::numeric_limits<double>::infinity();
    for (int kk = 0; kk < big_k; ++kk) {
      int atom = draw_index(mu_cdf.data(), m);
      qbuf[static_cast<size_t>(kk)] = inst.q[atom];
      cells[static_cast<size_t>(kk)] = draw_index(cell_cdf.col(atom).data(), g);
      qmax = std::max(qmax, inst.q[atom]);
    }
    double z = 0.0;
    for (int kk = 0; kk < big_k; ++kk) z += std::exp(qbuf[static_cast<size_t>(kk)] - qmax);
    auto& tup = tuples[static_cast<size_t>(s)];
    tup.resize(static_cast<size_t>(big_k));
    for (int kk = 0; kk < big_k; ++kk) {
      tup[static_cast<size_t>(kk)] = {cells[static_cast<size_t>(kk)],
                                      std::exp(qbuf[static_cast<size_t>(kk)] - qmax) / z};
    }
  }

  std::vector<double> table(static_cast<size_t>(g), 0.0);
  std::vector<double> logits(static_cast<size_t>(big_k));
  const long stage = std::max<long>(1, max_iters / 3);
  double lrs[3] = {0.3, 0.05, 0.01};
  for (int phase = 0; phase < 3; ++phase) {
    Ascent opt(table, lrs[phase]);
    for (long it = 0; it < stage; ++it) {
      std::vector<double> grad(static_cast<size_t>(g), 0.0);
      for (const auto& tup : tuples) {
        double lmax = -std::numeric_limits<double>::infinity();
        for (int kk = 0; kk < big_k; ++kk) {
          logits[static_cast<size_t>(kk)] = table[static_cast<size_t>(tup[kk].cell)];
          lmax = std::max(lmax, logits[static_cast<size_t>(kk)]);
        }
        double z = 0.0;
        for (int kk = 0; kk < big_k; ++kk) {
          logits[static_cast<size_t>(kk)] = std::exp(logits[static_cast<size_t>(kk)] - lmax);
          z += logits[static_cast<size_t>(kk)];
        }
        for (int kk = 0; kk < big_k; ++kk) {
          double phat = logits[static_cast<size_t>(kk)] / z;
          grad[static_cast<size_t>(tup[kk].cell)] += (tup[kk].weight - phat) / trials;
        }
      }
      opt.step(std::move(grad));
    }
  }
  Vec out(g);
  for (int j = 0; j < g; ++j) out[j] = table[static_cast<size_t>(j)];
  return out;
}

Vec recovered_from_table(const GridKernel& k, const Vec& table, double beta) {
  Vec logp = k.m.array().log() + table.array() / beta;
  double mx = logp.maxCoeff();
  Vec p = (logp.array() - mx).exp();
  return p / p.sum();
}

Vec diffused_target(const DiscreteInstance& inst, const GridKernel& k) {
  Vec target = exact_target(inst);
  Vec p = Vec::Zero(k.x.size());
  for (int i = 0; i < inst.size(); ++i) {
    p += target[i] * k.kappa.row(i).transpose();
  }
  return p;
}

}  // namespace

void DiscreteInstance::validate() const {
  if (actions.size() < 2) throw InputError("oracle: instance needs at least two actions");
  if (mu.size() != actions.size() || q.size() != actions.size()) {
    throw ShapeError("oracle: mu/q sizes do not match actions");
  }
  for (int i = 0; i < mu.size(); ++i) {
    if (!(mu[i] >= 0.0)) throw InputError("oracle: negative mass");
  }
  for (int i = 1; i < actions.size(); ++i) {
    if (!(actions[i] > actions[i - 1])) throw InputError("oracle: actions must increase");
  }
  if (std::abs(mu.sum() - 1.0) > 1e-12) throw InputError("oracle: mu must sum to one");
  if (!(beta > 0.0)) throw ConfigError("oracle: beta must be positive");
  if (K < 1) throw ConfigError("oracle: K must be >= 1");
  schedule.validate();
}

Vec exact_target(const DiscreteInstance& instance) {
  instance.validate();
  Vec logw = instance.mu.array().log() + instance.q.array() / instance.beta;
  double m = logw.maxCoeff();
  Vec w = (logw.array() - m).exp();
  return w / w.sum();
}

double kway_objective(const DiscreteInstance& instance, const Vec& table) {
  instance.validate();
  if (table.size() != instance.actions.size()) {
    throw ShapeError("oracle: table size mismatch");
  }
  const int m = instance.size();
  const int k = instance.K;
  double total = 0.0;
  Vec qsub(k), tsub(k);
  for_each_tuple(m, k, [&](const std::vector<int>& idx) {
    double p = 1.0;
    for (int kk = 0; kk < k; ++kk) {
      p *= instance.mu[idx[static_cast<size_t>(kk)]];
      qsub[kk] = instance.q[idx[static_cast<size_t>(kk)]];
      tsub[kk] = table[idx[static_cast<size_t>(kk)]];
    }
    Vec w = softmax(qsub);
    Vec lp = tsub.array() - (std::log((tsub.array() - tsub.maxCoeff()).exp().sum()) +
                             tsub.maxCoeff());
    total += p * (w.array() * lp.array()).sum();
  });
  return total;
}

RecoveryReport clean_recovery_check(const DiscreteInstance& instance, long max_iters) {
  instance.validate();
  if (instance.K < 2) throw ConfigError("oracle: recovery check needs K >= 2");
  const int m = instance.size();
  const int k = instance.K;

  std::vector<double> table(static_cast<size_t>(m), 0.0);
  Vec qsub(k), tsub(k);
  auto compute_grad = [&]() {
    std::vector<double> grad(static_cast<size_t>(m), 0.0);
    for_each_tuple(m, k, [&](const std::vector<int>& idx) {
      double p = 1.0;
      for (int kk = 0; kk < k; ++kk) {
        p *= instance.mu[idx[static_cast<size_t>(kk)]];
        qsub[kk] = instance.q[idx[static_cast<size_t>(kk)]];
        tsub[kk] = table[static_cast<size_t>(idx[static_cast<size_t>(kk)])];
      }
      Vec w = softmax(qsub);
      Vec phat = softmax(tsub);
      for (int kk = 0; kk < k; ++kk) {
        grad[static_cast<size_t>(idx[static_cast<size_t>(kk)])] += p * (w[kk] - phat[kk]);
      }
    });
    return grad;
  };

  RecoveryReport report;
  const long stage = std::max<long>(1, max_iters / 3);
  double lrs[3] = {0.2, 0.05, 0.01};
  long iters = 0;
  for (int phase = 0; phase < 3; ++phase) {
    Ascent opt(table, lrs[phase]);
    for (long it = 0; it < stage; ++it) {
      auto grad = compute_grad();
      double gnorm = 0.0;
      for (double v : grad) gnorm = std::max(gnorm, std::abs(v));
      report.grad_norm = gnorm;
      ++iters;
      if (gnorm < 1e-13) {
        phase = 3;
        break;
      }
      opt.step(std::move(grad));
    }
  }
  report.iterations = iters;
  report.converged = report.grad_norm < 1e-9;

  report.table.resize(m);
  for (int i = 0; i < m; ++i) report.table[i] = table[static_cast<size_t>(i)];
  double worst = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      double diff = (report.table[i] - report.table[j]) - (instance.q[i] - instance.q[j]);
      worst = std::max(worst, std::abs(diff));
    }
  }
  report.pairwise_diff_error = worst;
  return report;
}

SmoothedQReport smoothed_q_check(const DiscreteInstance& instance, double t) {
  instance.validate();
  if (!(t >= instance.schedule.t_min && t <= 1.0)) {
    throw InputError("oracle: t must lie in [t_min, 1]");
  }
  GridKernel k = build_kernel(instance, t);
  auto [alpha, sigma] = instance.schedule.alpha_sigma(t);
  const int g = static_cast<int>(k.x.size());
  const int m = instance.size();

  SmoothedQReport report;
  report.t = t;
  report.alpha = alpha;
  report.sigma = sigma;
  report.grid_size = g;
  report.mass_deficit = k.mass_deficit;

  // Smoothed Q on the grid: log posterior-average of exp(q / beta).
  double qs = instance.q.maxCoeff() / instance.beta;
  Vec qt(g);
  for (int j = 0; j < g; ++j) {
    qt[j] = k.m[j] > 0.0 ? std::log(k.u[j] / k.m[j]) + qs
                         : -std::numeric_limits<double>::infinity();
  }

  // Identity: diffusing the exact target equals tilting the diffused
  // behavior by the smoothed Q. Compared as densities (pmf / spacing).
  Vec route_a = diffused_target(instance, k);
  Vec route_b = k.u / k.u.sum();
  report.identity_max_density_error = (route_a - route_b).cwiseAbs().maxCoeff() / k.spacing;

  // Smoothed Q at the diffused atom positions vs q / beta.
  double atom_err = 0.0;
  for (int i = 0; i < m; ++i) {
    int j = static_cast<int>(
        std::lround((alpha * instance.actions[i] - k.x[0]) / k.spacing));
    j = std::clamp(j, 0, g - 1);
    atom_err = std::max(atom_err, std::abs(qt[j] - instance.q[i] / instance.beta));
  }
  report.qt_atom_error = atom_err;

  // Constancy of the smoothed Q over the diffused mass region.
  double log_mean = std::log((instance.mu.array() *
                              ((instance.q.array() - instance.q.maxCoeff()) / instance.beta).exp())
                                 .sum()) +
                    qs;
  double thresh = 1e-4 * k.m.maxCoeff();
  double dev = 0.0;
  for (int j = 0; j < g; ++j) {
    if (k.m[j] >= thresh) dev = std::max(dev, std::abs(qt[j] - log_mean));
  }
  report.qt_constancy_dev = dev;

  // Tilting the diffused behavior by the raw (nearest-atom) Q is not the
  // diffused target.
  Vec raw(g);
  for (int j = 0; j < g; ++j) {
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      double d = std::abs(k.x[j] - alpha * instance.actions[i]);
      if (d < best) {
        best = d;
        nearest = i;
      }
    }
    raw[j] = instance.q[nearest] / instance.beta;
  }
  Vec logp = k.m.array().log() + raw.array();
  double mx = logp.maxCoeff();
  Vec p_raw = (logp.array() - mx).exp();
  p_raw /= p_raw.sum();
  report.raw_tilt_tv = total_variation(p_raw, route_a);

  // Gap between the pairwise-softmax optimum and the exponential-weight
  // optimum (which equals the smoothed Q up to a constant). Skipped when the
  // grid is too large to enumerate pairs.
  if (g <= 400) {
    Vec table = optimize_pairwise_softmax_table(instance, k, 6000);
    double offset_num = 0.0, offset_den = 0.0;
    for (int j = 0; j < g; ++j) {
      if (k.m[j] >= thresh) {
        offset_num += k.m[j] * (table[j] - instance.beta * qt[j]);
        offset_den += k.m[j];
      }
    }
    double offset = offset_num / offset_den;
    double gap = 0.0;
    for (int j = 0; j < g; ++j) {
      if (k.m[j] >= thresh) {
        gap = std::max(gap, std::abs(table[j] - instance.beta * qt[j] - offset));
      }
    }
    report.weighting_gap = gap;
  } else {
    report.weighting_gap = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

OptimalityReport alignment_optimality_check(const DiscreteInstance& instance,
                                            const std::vector<double>& t_grid, int finite_k,
                                            long mc_trials, std::uint64_t seed) {
  instance.validate();
  if (finite_k < 2) throw ConfigError("oracle: finite_k must be >= 2");
  if (!t_grid.empty() && std::abs(instance.beta - 1.0) > 1e-12) {
    throw ConfigError("oracle: the noisy-time check requires beta = 1");
  }

  OptimalityReport report;
  report.finite_k = finite_k;

  // Clean part at t = 0: the K-way optimum tilts mu into the exact target.
  DiscreteInstance clean = instance;
  clean.K = std::min(instance.K, 3);
  if (clean.K < 2) clean.K = 2;
  RecoveryReport rec = clean_recovery_check(clean);
  Vec logp = instance.mu.array().log() + rec.table.array() / instance.beta;
  double mx = logp.maxCoeff();
  Vec p = (logp.array() - mx).exp();
  p /= p.sum();
  report.clean_tv = total_variation(p, exact_target(instance));

  for (double t : t_grid) {
    GridKernel k = build_kernel(instance, t);
    OptimalityReport::PerT row;
    row.t = t;

    Vec exp_table = optimize_exponential_table(k, 25000);
    Vec target = diffused_target(instance, k);
    row.exact_limit_tv = total_variation(recovered_from_table(k, exp_table, 1.0), target);

    Vec fk_table = finite_k == 2
                       ? optimize_pairwise_softmax_table(instance, k, 6000)
                       : optimize_mc_softmax_table(instance, k, finite_k, mc_trials, seed, 3000);
    row.finite_k_tv = total_variation(recovered_from_table(k, fk_table, 1.0), target);
    report.per_t.push_back(row);
  }
  return report;
}

double total_variation(const Vec& p, const Vec& q) {
  if (p.size() != q.size()) throw ShapeError("total_variation: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

DiscreteInstance default_instance() {
  DiscreteInstance inst;
  inst.actions = Vec(3);
  inst.actions << -1.0, 0.0, 1.0;
  inst.mu = Vec(3);
  inst.mu << 0.5, 0.3, 0.2;
  inst.q = Vec(3);
  inst.q << 0.0, 1.0, 2.0;
  inst.beta = 1.0;
  inst.K = 2;
  return inst;
}

}  // namespace diffalign::oracle
