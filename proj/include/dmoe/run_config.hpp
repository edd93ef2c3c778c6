// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration for `dmoe train`:
//
//   {
//     "moe":   { "hidden_size": 16, "num_experts": 4, "capacity_factor": "dropless", ... },
//     "task":  { "num_clusters": 4, "skew": 2.0, ... },
//     "train": { "steps": 300, "lr": 0.01, ... }
//   }
//
// Keys match the C++ field names. Every section and key is optional;
// unknown keys are rejected.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dmoe/moe.hpp"
#include "dmoe/trainer.hpp"

namespace dmoe {

// Message names the offending key path, e.g. "moe.top_kk: unknown key".
class RunConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  MoEConfig model;
  SynthTaskConfig task;
  TrainOptions train;

  // Dropless unless moe.capacity_factor is a number.
  TrainMode mode() const { return TrainMode{model.capacity_factor}; }
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// "dropless", "capacity" (factor 1) or "capacity:<cf>".
TrainMode parse_train_mode(std::string_view text);

}  // namespace dmoe
