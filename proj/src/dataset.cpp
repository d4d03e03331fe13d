#include "diffalign/dataset.hpp"

#include "diffalign/csv.hpp"
#include "diffalign/errors.hpp"

namespace diffalign {

void BehaviorDataset::validate() const {
  if (states.rows() != actions.rows()) {
    throw ShapeError("behavior dataset: state and action row counts differ");
  }
  if (actions.cols() < 1) {
    throw ShapeError("behavior dataset: actions must have at least one column");
  }
  if (!actions.allFinite() || !states.allFinite()) {
    throw InputError("behavior dataset: non-finite values");
  }
}

BehaviorDataset load_behavior_csv(const std::string& path) {
  csv::Table t = csv::read_table(path);
  int n_state = 0;
  int n_action = 0;
  for (const auto& name : t.header) {
    if (!name.empty() && name[0] == 's') {
      ++n_state;
    } else if (!name.empty() && name[0] == 'a') {
      ++n_action;
    } else {
      throw InputError(path + ": unexpected column '" + name + "'");
    }
  }
  if (n_action == 0) {
    throw InputError(path + ": no action columns found");
  }
  BehaviorDataset ds;
  long n = static_cast<long>(t.rows.size());
  ds.states.resize(n, n_state);
  ds.actions.resize(n, n_action);
  for (long i = 0; i < n; ++i) {
    for (int j = 0; j < n_state; ++j) ds.states(i, j) = t.rows[static_cast<size_t>(i)][j];
    for (int j = 0; j < n_action; ++j) {
      ds.actions(i, j) = t.rows[static_cast<size_t>(i)][static_cast<size_t>(n_state + j)];
    }
  }
  ds.validate();
  return ds;
}

void save_behavior_csv(const std::string& path, const BehaviorDataset& dataset) {
  dataset.validate();
  csv::Table t;
  for (int j = 0; j < dataset.state_dim(); ++j) t.header.push_back("s" + std::to_string(j));
  for (int j = 0; j < dataset.action_dim(); ++j) t.header.push_back("a" + std::to_string(j));
  t.rows.reserve(static_cast<size_t>(dataset.size()));
  for (long i = 0; i < dataset.size(); ++i) {
    std::vector<double> row;
    row.reserve(static_cast<size_t>(dataset.state_dim() + dataset.action_dim()));
    for (int j = 0; j < dataset.state_dim(); ++j) row.push_back(dataset.states(i, j));
    for (int j = 0; j < dataset.action_dim(); ++j) row.push_back(dataset.actions(i, j));
    t.rows.push_back(std::move(row));
  }
  csv::write_table(path, t);
}

}  // namespace diffalign
