// SPDX-License-Identifier: Apache-2.0

#include "dmoe/csv.hpp"

#include <charconv>
#include <ostream>

namespace dmoe {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

void write_train_csv(std::ostream& os, const std::vector<StepMetrics>& metrics) {
  os << kTrainCsvHeader << '\n';
  for (const auto& m : metrics) {
    os << m.step << ',' << format_double(m.loss) << ',' << format_double(m.aux_loss) << ','
       << format_double(m.drop_fraction) << ',' << m.max_expert_load << '\n';
  }
}

}  // namespace dmoe
