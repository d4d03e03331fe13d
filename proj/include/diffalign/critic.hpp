#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "diffalign/envs2d.hpp"
#include "diffalign/rng.hpp"
#include "diffalign/scalar_field.hpp"

namespace diffalign {

// Small plain MLP critic (state, action) -> scalar Q.
struct CriticParams {
  int state_dim = 0;
  int action_dim = 2;
  int width = 64;
  int hidden_layers = 2;
  std::vector<double> flat;

  long param_count() const;
  void validate() const;
};

// Q annotation source: either an analytic 2D field or a learned critic.
using QSource = std::variant<QField, CriticParams>;

double q_eval(const QSource& source, const Vec& state, const Vec& action);

Vec critic_values(const CriticParams& critic, const Mat& states, const Mat& actions);

struct CriticTrainConfig {
  double tau = 0.7;  // expectile; 0.5 recovers least squares
  int steps = 4000;
  int batch = 256;
  double lr = 1e-3;
  int width = 64;
  int hidden_layers = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ExpectileLossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

// Asymmetric least squares |tau - 1{r - Q < 0}| * (r - Q)^2 on one batch.
ExpectileLossResult expectile_loss(const CriticParams& critic, const Mat& states,
                                   const Mat& actions, const Vec& rewards, double tau);

// Fits the critic by expectile regression on (state, action, reward) triples.
CriticParams train_expectile_critic(const Mat& states, const Mat& actions, const Vec& rewards,
                                    const CriticTrainConfig& config);

CriticParams init_critic(std::uint64_t seed, int state_dim, int action_dim, int width,
                         int hidden_layers);

}  // namespace diffalign
