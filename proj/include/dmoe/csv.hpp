// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dmoe/trainer.hpp"

namespace dmoe {

// Shortest round-trip form; integral values keep a trailing ".0" so a zero
// prints as "0.0".
std::string format_double(double v);

inline constexpr const char* kTrainCsvHeader = "step,loss,aux_loss,drop_fraction,max_expert_load";

void write_train_csv(std::ostream& os, const std::vector<StepMetrics>& metrics);

}  // namespace dmoe
