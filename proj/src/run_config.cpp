// SPDX-License-Identifier: Apache-2.0

#include "dmoe/run_config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dmoe {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw RunConfigError(path + ": " + what); }

std::size_t get_count(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) fail(path, "expected a nonnegative integer");
  return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(path, "expected a finite number");
  return d;
}

using Setter = std::function<void(const json&, const std::string&)>;

void apply_section(const json& root, const char* section, const std::map<std::string, Setter>& setters) {
  if (!root.contains(section)) return;
  const json& obj = root.at(section);
  if (!obj.is_object()) fail(section, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = std::string(section) + "." + key;
    const auto it = setters.find(key);
    if (it == setters.end()) fail(path, "unknown key");
    it->second(value, path);
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw RunConfigError(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) fail("<root>", "expected an object");
  for (const auto& [key, value] : root.items()) {
    if (key != "moe" && key != "task" && key != "train") fail(key, "unknown key");
  }

  RunConfig c;
  MoEConfig& m = c.model;
  apply_section(root, "moe",
                {
                    {"hidden_size", [&](const json& v, const std::string& p) { m.hidden_size = get_count(v, p); }},
                    {"ffn_hidden_size",
                     [&](const json& v, const std::string& p) { m.ffn_hidden_size = get_count(v, p); }},
                    {"num_experts", [&](const json& v, const std::string& p) { m.num_experts = get_count(v, p); }},
                    {"top_k", [&](const json& v, const std::string& p) { m.top_k = get_count(v, p); }},
                    {"block_size", [&](const json& v, const std::string& p) { m.block_size = get_count(v, p); }},
                    {"activation",
                     [&](const json& v, const std::string& p) {
                       if (!v.is_string()) fail(p, "expected a string");
                       try {
                         m.activation = parse_activation(v.get<std::string>());
                       } catch (const std::exception& e) {
                         fail(p, e.what());
                       }
                     }},
                    {"capacity_factor",
                     [&](const json& v, const std::string& p) {
                       if (v.is_null() || (v.is_string() && v.get<std::string>() == "dropless")) {
                         m.capacity_factor.reset();
                       } else {
                         m.capacity_factor = get_real(v, p);
                       }
                     }},
                    {"aux_loss_coefficient",
                     [&](const json& v, const std::string& p) { m.aux_loss_coefficient = get_real(v, p); }},
                    {"renormalize_gates",
                     [&](const json& v, const std::string& p) {
                       if (!v.is_boolean()) fail(p, "expected a boolean");
                       m.renormalize_gates = v.get<bool>();
                     }},
                });

  SynthTaskConfig& t = c.task;
  bool task_hidden_set = false;
  apply_section(root, "task",
                {
                    {"num_clusters", [&](const json& v, const std::string& p) { t.num_clusters = get_count(v, p); }},
                    {"tokens_per_batch",
                     [&](const json& v, const std::string& p) { t.tokens_per_batch = get_count(v, p); }},
                    {"hidden_size",
                     [&](const json& v, const std::string& p) {
                       t.hidden_size = get_count(v, p);
                       task_hidden_set = true;
                     }},
                    {"noise_std", [&](const json& v, const std::string& p) { t.noise_std = get_real(v, p); }},
                    {"skew", [&](const json& v, const std::string& p) { t.skew = get_real(v, p); }},
                    {"seed", [&](const json& v, const std::string& p) { t.seed = get_count(v, p); }},
                });
  if (!task_hidden_set) t.hidden_size = m.hidden_size;

  TrainOptions& o = c.train;
  apply_section(root, "train",
                {
                    {"steps", [&](const json& v, const std::string& p) { o.steps = get_count(v, p); }},
                    {"lr", [&](const json& v, const std::string& p) { o.adam.lr = get_real(v, p); }},
                    {"beta1", [&](const json& v, const std::string& p) { o.adam.beta1 = get_real(v, p); }},
                    {"beta2", [&](const json& v, const std::string& p) { o.adam.beta2 = get_real(v, p); }},
                    {"epsilon", [&](const json& v, const std::string& p) { o.adam.epsilon = get_real(v, p); }},
                    {"init_seed", [&](const json& v, const std::string& p) { o.init_seed = get_count(v, p); }},
                    {"router_init_std",
                     [&](const json& v, const std::string& p) { o.router_init_std = get_real(v, p); }},
                });

  if (t.hidden_size != m.hidden_size) fail("task.hidden_size", "must equal moe.hidden_size");
  try {
    m.validate();
  } catch (const std::exception& e) {
    fail("moe", e.what());
  }
  try {
    t.validate();
  } catch (const std::exception& e) {
    fail("task", e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RunConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const RunConfigError& e) {
    throw RunConfigError(path.string() + ": " + e.what());
  }
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "dropless") return TrainMode::dropless();
  if (text == "capacity") return TrainMode::capacity(1.0);
  if (text.substr(0, 9) == "capacity:") {
    const std::string arg(text.substr(9));
    std::size_t used = 0;
    double cf = 0.0;
    try {
      cf = std::stod(arg, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != 0 && used == arg.size() && cf > 0.0 && std::isfinite(cf)) return TrainMode::capacity(cf);
  }
  throw std::invalid_argument("bad --mode '" + std::string(text) + "' (expected dropless, capacity or capacity:<cf>)");
}

}  // namespace dmoe
