// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dmoe/bench.hpp"
#include "dmoe/csv.hpp"
#include "dmoe/parallel.hpp"
#include "dmoe/routing_stats.hpp"
#include "dmoe/run_config.hpp"
#include "dmoe/validate.hpp"

namespace dmoe::cli {

namespace {

// Thrown for bad flag combinations found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ValidateArgs {
  std::string filter;
  std::uint64_t seed = 0;
  std::size_t cases = 0;
  bool inject_fault = false;
};

struct BenchArgs {
  std::string kind;
  std::size_t m = 0, k = 0, n = 0;
  std::vector<std::size_t> block_sizes{16};
  double density = 0.25;
  std::string preset;
  std::size_t tokens = 1024;
  std::size_t num_experts = 4;
  std::size_t ffn_hidden_size = 0;
  std::size_t reps = 100;
  std::size_t warmup = 3;
  std::string out;
  bool dry_run = false;
  std::uint64_t seed = 0;
};

struct StatsArgs {
  StatsOptions options;
  std::string distribution = "uniform";
};

struct TrainArgs {
  std::string config;
  std::string mode;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Writes to `path`, or to `fallback` when path is empty.
template <typename Fn>
void with_output(const std::string& path, std::ostream& fallback, Fn fn) {
  if (path.empty()) {
    fn(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open output file '" + path + "'");
  fn(f);
  if (!f.flush()) throw UsageError("failed writing '" + path + "'");
}

int cmd_validate(const ValidateArgs& a, std::ostream& out, std::ostream& err) {
  ValidateOptions o;
  if (!a.filter.empty()) o.filter = a.filter;
  o.seed = a.seed;
  o.cases = a.cases;
  o.inject_fault = a.inject_fault;
  std::vector<SuiteResult> results;
  try {
    results = run_validation(o);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  print_report(out, results);
  return all_passed(results) ? kExitOk : kExitValidationFailed;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const BenchKind kind = parse_bench_kind(a.kind);
  if (a.block_sizes.empty()) throw UsageError("--block-size needs at least one value");
  std::vector<BenchRow> rows;
  for (std::size_t bs : a.block_sizes) {
    BenchProblem p;
    if (!a.preset.empty()) {
      if (a.m || a.k || a.n) throw UsageError("--preset cannot be combined with --m/--k/--n");
      p = preset_problem(kind, a.preset, a.tokens, bs);
    } else {
      if (!a.m || !a.k || !a.n) throw UsageError("bench needs --m, --k and --n, or --preset");
      p.kind = kind;
      p.m = a.m;
      p.k = a.k;
      p.n = a.n;
      p.block_size = bs;
      p.density = a.density;
      p.num_experts = a.num_experts;
      p.ffn_hidden_size = a.ffn_hidden_size ? a.ffn_hidden_size : (a.num_experts ? a.n / a.num_experts : 0);
    }
    p.seed = a.seed;
    rows.push_back(run_bench(p, a.dry_run ? 0 : a.reps, a.warmup));
  }
  with_output(a.out, out, [&](std::ostream& os) { write_bench_csv(os, rows); });
  return kExitOk;
}

int cmd_stats(StatsArgs a, std::ostream& out) {
  a.options.distribution = RoutingDistribution::parse(a.distribution);
  const StatsReport r = routing_stats(a.options);
  print_stats(out, a.options, r);
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c;
  try {
    if (!a.config.empty()) c = load_run_config(a.config);
  } catch (const RunConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  const TrainMode mode = a.mode.empty() ? c.mode() : parse_train_mode(a.mode);
  if (a.steps) c.train.steps = *a.steps;
  if (a.seed) {
    c.task.seed = *a.seed;
    c.train.init_seed = *a.seed;
  }
  std::vector<StepMetrics> metrics;
  try {
    metrics = train_loop(c.model, c.task, c.train, mode);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  }
  with_output(a.out, out, [&](std::ostream& os) { write_train_csv(os, metrics); });
  if (!a.out.empty() && !metrics.empty()) {
    out << "steps=" << metrics.size() << " initial_loss=" << format_double(metrics.front().loss)
        << " final_loss=" << format_double(metrics.back().loss) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block-sparse dropless mixture-of-experts toolkit"};
  app.name("dmoe");
  app.require_subcommand(1);
  std::size_t workers = 1;
  app.add_option("--workers", workers, "Kernel worker threads")->check(CLI::PositiveNumber);

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "Run oracle, format, permutation and gradient suites");
  validate->add_option("--filter", va.filter, "Only suites whose name contains this text");
  validate->add_option("--seed", va.seed, "Base seed; case i uses seed + i");
  validate->add_option("--cases", va.cases, "Cases per suite (0 = suite default)");
  validate->add_flag("--inject-fault", va.inject_fault, "Corrupt one sdd output block (test hook)");
  validate->add_option("--workers", workers, "Kernel worker threads")->check(CLI::PositiveNumber);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time sdd/dsd/dds/dmoe and write CSV");
  bench->add_option("kind", ba.kind, "sdd, dsd, dds or dmoe")->required();
  bench->add_option("--m", ba.m);
  bench->add_option("--k", ba.k);
  bench->add_option("--n", ba.n);
  bench->add_option("--block-size", ba.block_sizes, "One or more block sizes")->delimiter(',');
  bench->add_option("--density", ba.density, "Fraction of nonzero blocks (random topology)");
  bench->add_option("--preset", ba.preset, "xs, small or medium (block-diagonal MoE topology)");
  bench->add_option("--tokens", ba.tokens, "Tokens for --preset");
  bench->add_option("--num-experts", ba.num_experts, "dmoe without preset");
  bench->add_option("--ffn-hidden-size", ba.ffn_hidden_size, "dmoe without preset (default n / num-experts)");
  bench->add_option("--reps", ba.reps, "Timed repetitions");
  bench->add_option("--warmup", ba.warmup, "Untimed repetitions");
  bench->add_option("--out", ba.out, "CSV path (default stdout)");
  bench->add_flag("--dry-run", ba.dry_run, "Build operands and report shapes without timing");
  bench->add_option("--seed", ba.seed);
  bench->add_option("--workers", workers, "Kernel worker threads")->check(CLI::PositiveNumber);

  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "Drop fractions under capacity limits");
  stats->add_option("--num-experts", sa.options.num_experts);
  stats->add_option("--tokens", sa.options.tokens);
  stats->add_option("--capacity-factor", sa.options.capacity_factors, "One or more capacity factors")
      ->delimiter(',');
  stats->add_option("--distribution", sa.distribution, "uniform, random, zipf:<a> or onehot");
  stats->add_option("--seed", sa.options.seed);
  stats->add_option("--samples", sa.options.samples, "Sampled assignments per capacity factor");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on the synthetic clustered task and write metrics CSV");
  train->add_option("--config", ta.config, "JSON run config");
  train->add_option("--mode", ta.mode, "dropless, capacity or capacity:<cf> (overrides config)");
  train->add_option("--steps", ta.steps);
  train->add_option("--seed", ta.seed, "Task and initialization seed");
  train->add_option("--out", ta.out, "CSV path (default stdout)");
  train->add_option("--workers", workers, "Kernel worker threads")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n' << "run 'dmoe --help' for usage\n";
    return kExitUsage;
  }

  ScopedWorkers scoped(workers);
  try {
    if (*validate) return cmd_validate(va, out, err);
    if (*bench) return cmd_bench(ba, out);
    if (*stats) return cmd_stats(sa, out);
    if (*train) return cmd_train(ta, out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace dmoe::cli
