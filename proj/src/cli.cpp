#include "optibfm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "optibfm/config.hpp"
#include "optibfm/errors.hpp"
#include "optibfm/harness.hpp"
#include "optibfm/propcheck.hpp"

namespace optibfm {

namespace fs = std::filesystem;

namespace {

/// Usage-level failure mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) throw UsageError(flag + ": expected a comma-separated list");
  return out;
}

ExperimentConfig load_with_overrides(const std::string& path, const std::string& seeds, bool timing) {
  ExperimentConfig config = load_config(path);
  if (!seeds.empty()) {
    config.seeds = parse_list<std::uint64_t>(seeds, "--seeds");
  }
  if (timing) config.timing = true;
  config.validate();
  return config;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::string& seeds, int jobs,
            bool timing, std::ostream& out) {
  const ExperimentConfig config = load_with_overrides(config_path, seeds, timing);
  const fs::path dir = out_dir.empty() ? fs::path(config.output) : fs::path(out_dir);
  const ExperimentResult result = run_experiment(config, jobs);
  write_outputs(result, config, dir);
  out << "wrote " << result.runs.size() << " runs to " << dir.string() << " (config_hash=" << result.config_hash
      << ")\n";
  return 0;
}

int cmd_verify(const std::string& filter, const CheckOptions& opts, int jobs, const std::string& report_path,
               std::ostream& out) {
  const auto names = check_names();
  if (!filter.empty() && std::none_of(names.begin(), names.end(),
                                      [&](const std::string& n) { return n.find(filter) != std::string::npos; })) {
    throw UsageError("--filter '" + filter + "' matches no check");
  }
  const std::vector<CheckReport> reports = run_checks(filter, opts, jobs);
  nlohmann::json j = nlohmann::json::array();
  bool all_pass = true;
  for (const auto& r : reports) {
    out << format_report_line(r) << '\n';
    all_pass = all_pass && r.pass;
    j.push_back({{"name", r.name},
                 {"instances", r.instances},
                 {"worst_violation", r.worst_violation},
                 {"tolerance", r.tolerance},
                 {"pass", r.pass},
                 {"detail", r.detail}});
  }
  if (!report_path.empty()) {
    nlohmann::json doc = {{"seed", opts.seed},
                          {"instances", opts.instances},
                          {"negative_control", opts.negative_control},
                          {"checks", j}};
    write_text(report_path, doc.dump(1) + "\n");
  }
  out << (all_pass ? "all checks passed" : "some checks FAILED") << '\n';
  return all_pass ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, const std::string& seeds, int jobs,
              std::ostream& out) {
  const ExperimentConfig config = load_with_overrides(config_path, seeds, false);
  const fs::path dir = out_dir.empty() ? fs::path(config.output) : fs::path(out_dir);
  const auto cells = run_sweep(config, dir, jobs);
  if (!cells.empty()) {
    const auto& best = cells.front();
    out << "best cell " << best.cell_id << " agent=" << best.agent << " seed=" << best.seed;
    for (const auto& [k, v] : best.params) out << ' ' << k << '=' << num(v);
    out << " cumulative_return=" << num(best.cumulative_return) << '\n';
  }
  out << "wrote " << cells.size() << " cell results to " << (dir / "sweep_summary.csv").string() << '\n';
  return 0;
}

int cmd_eval_data(const std::string& runlog, std::string snapshot, const std::string& budgets_text,
                  const std::string& run_id, const std::string& out_path, std::ostream& out) {
  if (!fs::exists(runlog)) throw UsageError("run log '" + runlog + "' does not exist");
  if (snapshot.empty()) snapshot = (fs::path(runlog).parent_path() / "world.json").string();
  if (!fs::exists(snapshot)) throw UsageError("world snapshot '" + snapshot + "' does not exist");
  const auto budgets = parse_list<std::int64_t>(budgets_text, "--budgets");

  nlohmann::json snap;
  {
    std::ifstream in(snapshot);
    try {
      snap = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("world snapshot is not valid JSON: " + std::string(e.what()));
    }
  }
  if (snap.value("format", "") != "optibfm-world") throw UsageError("'" + snapshot + "' is not a world snapshot");
  const ExperimentConfig config = parse_config(snap.at("config"));
  auto world = std::make_shared<const FeatureWorld>(FeatureWorld::from_json(snap.at("world")));
  const auto z = snap.at("z_true").get<std::vector<double>>();
  const RewardTask task(Eigen::Map<const Vec>(z.data(), static_cast<Eigen::Index>(z.size())),
                        config.task.noise_sigma, config.task.s_bound);

  const CsvTable steps = read_csv(runlog);
  const auto labeled = labeled_pairs_from_csv(steps, run_id);
  const std::int64_t largest = *std::max_element(budgets.begin(), budgets.end());
  if (largest > static_cast<std::int64_t>(labeled.size())) {
    throw UsageError("budget " + std::to_string(largest) + " exceeds the " + std::to_string(labeled.size()) +
                     " labeled transitions available");
  }
  SfOracle oracle(world, config.cache_capacity, config.vi_tol);
  const auto rows = data_quality_eval(labeled, oracle, task, budgets);

  std::ostringstream csv;
  csv << "# optibfm data_quality config_hash=" << config_hash(config) << '\n';
  csv << "budget,return,relative\n";
  for (const auto& r : rows) csv << r.budget << ',' << num(r.expected_return) << ',' << num(r.relative) << '\n';
  if (out_path.empty()) {
    out << csv.str();
  } else {
    write_text(out_path, csv.str());
    out << "wrote " << rows.size() << " rows to " << out_path << '\n';
  }
  return 0;
}

int cmd_timing(const std::string& config_path, int steps, int warmup, const std::string& out_path,
               std::ostream& out) {
  const ExperimentConfig config = load_with_overrides(config_path, "", true);
  auto world = std::make_shared<const FeatureWorld>(make_random_world(config.world));
  const RewardTask task = make_task(config.task, config.world.dim);
  const auto rows = timing_probe(config.agents, world, task, steps, warmup);
  std::ostringstream csv;
  csv << "# optibfm timing config_hash=" << config_hash(config) << '\n';
  csv << "agent,mean_step_seconds,calls\n";
  for (const auto& r : rows) csv << r.agent << ',' << num(r.mean_seconds) << ',' << r.calls << '\n';
  if (out_path.empty()) {
    out << csv.str();
  } else {
    write_text(out_path, csv.str());
    out << "wrote " << rows.size() << " rows to " << out_path << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimistic task inference on synthetic successor-feature worlds"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seeds, filter, report, runlog, snapshot, budgets, run_id;
  int jobs = 0;
  bool timing = false;
  CheckOptions check_opts;
  int steps = 2000;
  int warmup = 100;

  auto* run = app.add_subcommand("run", "run every (agent, seed) cell of a config");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (default: config 'output')");
  run->add_option("--seeds", seeds, "comma-separated seed override");
  run->add_option("--jobs", jobs, "parallel workers (0 = all cores)");
  run->add_flag("--timing", timing, "emit per-step wall time");

  auto* verify = app.add_subcommand("verify", "run the randomized property checks");
  verify->add_option("--filter", filter, "only checks whose name contains this");
  verify->add_option("--jobs", jobs, "parallel workers (0 = all cores)");
  verify->add_option("--seed", check_opts.seed, "base seed");
  verify->add_option("--instances", check_opts.instances, "randomized instances per inequality check");
  verify->add_option("--out", report, "JSON report path")->default_val("verify_report.json");
  verify->add_flag("--negative-control", check_opts.negative_control, "perturb every check so it must fail");

  auto* sweep = app.add_subcommand("sweep", "grid search over the config's grid axes");
  sweep->add_option("--config", config_path, "experiment config with a 'grid' section")->required();
  sweep->add_option("--out", out_dir, "output directory (default: config 'output')");
  sweep->add_option("--seeds", seeds, "comma-separated seed override");
  sweep->add_option("--jobs", jobs, "parallel workers (0 = all cores)");

  auto* eval = app.add_subcommand("eval-data", "refit on the first n labels of a run and score the policy");
  eval->add_option("--runlog", runlog, "steps.csv of a run")->required();
  eval->add_option("--snapshot", snapshot, "world.json (default: next to the run log)");
  eval->add_option("--budgets", budgets, "comma-separated label budgets")->required();
  eval->add_option("--run-id", run_id, "run to evaluate (default: first in the log)");
  eval->add_option("--out", out_dir, "output CSV (default: stdout)");

  auto* timing_cmd = app.add_subcommand("timing", "per-step latency of each agent in a config");
  timing_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
  timing_cmd->add_option("--steps", steps, "steps per agent")->check(CLI::PositiveNumber);
  timing_cmd->add_option("--warmup", warmup, "leading calls to discard")->check(CLI::NonNegativeNumber);
  timing_cmd->add_option("--out", out_dir, "output CSV (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, seeds, jobs, timing, out);
    if (*verify) {
      if (check_opts.instances < 1) throw UsageError("--instances must be >= 1");
      return cmd_verify(filter, check_opts, jobs, report, out);
    }
    if (*sweep) return cmd_sweep(config_path, out_dir, seeds, jobs, out);
    if (*eval) return cmd_eval_data(runlog, snapshot, budgets, run_id, out_dir, out);
    if (*timing_cmd) return cmd_timing(config_path, steps, warmup, out_dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace optibfm
