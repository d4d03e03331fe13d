#pragma once

#include <Eigen/Core>
#include <string>

namespace diffalign {

// Reward-free (state, action) pairs. States may have zero columns for the
// stateless 2D bandits.
struct BehaviorDataset {
  Eigen::MatrixXd states;   // [N, state_dim]
  Eigen::MatrixXd actions;  // [N, action_dim]

  long size() const { return actions.rows(); }
  int state_dim() const { return static_cast<int>(states.cols()); }
  int action_dim() const { return static_cast<int>(actions.cols()); }

  void validate() const;
};

// CSV with header "s0,..,s{m},a0,..,a{n}", or "a0,..,a{n}" when stateless.
BehaviorDataset load_behavior_csv(const std::string& path);
void save_behavior_csv(const std::string& path, const BehaviorDataset& dataset);

}  // namespace diffalign
