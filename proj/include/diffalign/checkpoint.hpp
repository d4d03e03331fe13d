#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "diffalign/critic.hpp"
#include "diffalign/scalar_field.hpp"
#include "diffalign/schedule.hpp"

namespace diffalign {

// Versioned JSON container for trained weights. Parameters are stored as a
// little-endian hex dump of the raw float64 array, so a write-then-read
// round-trips bit-exactly.
struct Checkpoint {
  std::string kind;  // "scalar_field" or "critic"
  std::uint64_t seed = 0;
  DiffusionSchedule schedule;
  std::optional<FieldConfig> field;       // set when kind == "scalar_field"
  std::optional<CriticParams> critic;     // architecture fields; flat lives below
  std::vector<double> flat;

  static Checkpoint for_field(const ScalarFieldParams& params, const DiffusionSchedule& schedule,
                              std::uint64_t seed);
  static Checkpoint for_critic(const CriticParams& critic, const DiffusionSchedule& schedule,
                               std::uint64_t seed);

  ScalarFieldParams to_field() const;  // CheckpointError if kind mismatches
  CriticParams to_critic() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace diffalign
