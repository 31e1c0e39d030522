#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "optibfm/agent.hpp"
#include "optibfm/sfworld.hpp"

namespace optibfm {

struct DriftConfig {
  std::string kind = "constant";  // constant | piecewise | ramp
  // piecewise: (start step, z) entries; z may be given or drawn from a seed
  std::vector<std::pair<std::int64_t, Vec>> schedule;
  // ramp: start at the task's z_true, end at end_z
  std::optional<Vec> end_z;
  std::uint64_t end_seed = 1;
  std::int64_t burn_in = 0;
  std::int64_t ramp_steps = 1;
};

struct TaskConfig {
  std::optional<Vec> z_true;  // drawn from `seed` when absent
  std::uint64_t seed = 0;
  double s_bound = 1.0;
  double noise_sigma = 0.1;
  DriftConfig drift;
};

RewardTask make_task(const TaskConfig& config, int dim);

struct ExperimentConfig {
  WorldConfig world;
  TaskConfig task;
  std::vector<AgentConfig> agents;
  int n_episodes = 10;
  std::vector<std::uint64_t> seeds;
  std::string output = "out";
  bool timing = false;
  double vi_tol = 1e-10;
  std::size_t cache_capacity = 4096;
  /// Sweep axes (beta, sigma, lambda, rho, kappa); ignored by `run`.
  std::map<std::string, std::vector<double>> grid;

  void validate() const;
};

/// Parses and validates; throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& j);
/// Reads a JSON config file; syntax errors report the line number.
ExperimentConfig load_config(const std::string& path);

nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const AgentConfig& agent);

/// FNV-1a 64 over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace optibfm
