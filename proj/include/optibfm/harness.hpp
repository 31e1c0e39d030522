#pragma once

// Experiment orchestration. Each (agent, seed) cell owns its agent state,
// oracle cache and random streams, so cells run in any order (or in parallel)
// and produce identical logs.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "optibfm/agent.hpp"
#include "optibfm/config.hpp"

namespace optibfm {

struct RunLog {
  std::string run_id;
  std::string agent;
  std::uint64_t seed = 0;
  int dim = 0;
  std::vector<EpisodeLog> episodes;

  /// Per-episode regret increments G_star - G_hat.
  std::vector<double> regret_increments() const;
  /// Running sums of the increments, in episode order.
  std::vector<double> cumulative_regret() const;
  std::int64_t labels_used() const;
};

struct SummaryRow {
  std::string agent;
  std::int64_t episode = 0;
  double g_mean = 0.0, g_min = 0.0, g_max = 0.0;
  double regret_mean = 0.0, regret_min = 0.0, regret_max = 0.0;
  int n_seeds = 0;
};

struct ExperimentResult {
  std::string config_hash;
  std::vector<RunLog> runs;  // agent-major, seed-minor, in config order
  std::vector<SummaryRow> summary;
};

/// Environment stream of a run seed; shared by every agent under that seed.
EnvStream env_stream(std::uint64_t seed);
/// Agent-side randomness (shooting candidates, posterior draws, Random baseline).
Rng agent_stream(std::uint64_t seed);

/// One full run of `n_episodes` for a single agent and seed.
RunLog run_single(std::shared_ptr<const FeatureWorld> world, const RewardTask& task, const AgentConfig& agent,
                  std::uint64_t seed, int n_episodes, bool timing = false, std::optional<Estimator> initial = {},
                  std::size_t cache_capacity = 4096, double vi_tol = 1e-10);

/// Serial reference: cells run in order on the calling thread.
ExperimentResult run_experiment_serial(const ExperimentConfig& config);
/// OpenMP work-pool over cells; jobs <= 0 uses the runtime default.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 0);

std::vector<SummaryRow> summarize(const std::vector<RunLog>& runs);

/// steps.csv, episodes.csv, summary.csv and world.json under `dir`.
void write_outputs(const ExperimentResult& result, const ExperimentConfig& config,
                   const std::filesystem::path& dir);
void write_steps_csv(const std::vector<RunLog>& runs, const std::string& hash, bool timing,
                     const std::filesystem::path& path);
void write_episodes_csv(const std::vector<RunLog>& runs, const std::string& hash,
                        const std::filesystem::path& path);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& hash,
                       const std::filesystem::path& path);
nlohmann::json world_snapshot(const ExperimentConfig& config, const FeatureWorld& world);

// ---------------------------------------------------------------------------
// Evaluation

struct DataQualityRow {
  std::int64_t budget = 0;
  double expected_return = 0.0;
  double relative = 0.0;  // against the Oracle's expected return
};

/// Labeled (state, reward) pairs of a run, in the order they were observed.
std::vector<Labeled> labeled_pairs(const RunLog& run);

/// (state, reward) for every visited step of a run: logged labels where
/// requested, otherwise the reward the environment stream would have produced.
/// Lets label-free baselines be scored as data collectors.
std::vector<Labeled> transition_pairs(const RunLog& run, const RewardTask& task, const FeatureWorld& world);

/// Refits z_n offline on the first n labeled pairs and scores pi_{z_n} exactly.
std::vector<DataQualityRow> data_quality_eval(const std::vector<Labeled>& labeled, SfOracle& oracle,
                                              const RewardTask& task, const std::vector<std::int64_t>& budgets);

struct TimingRow {
  std::string agent;
  double mean_seconds = 0.0;
  std::int64_t calls = 0;
};

/// Mean per-step selection+update wall time, discarding the first `warmup` calls.
std::vector<TimingRow> timing_probe(const std::vector<AgentConfig>& agents, std::shared_ptr<const FeatureWorld> world,
                                    const RewardTask& task, int steps, int warmup = 100);

// ---------------------------------------------------------------------------
// Step-log reading

struct CsvTable {
  std::vector<std::string> metadata;  // leading '#' lines
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Labeled pairs of `run_id` (the first run when empty) from a steps.csv.
std::vector<Labeled> labeled_pairs_from_csv(const CsvTable& steps, const std::string& run_id = {});

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  std::string cell_id;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;
  std::string agent;
  double cumulative_return = 0.0;
  std::int64_t labels = 0;
};

/// Cross product of the grid axes with the seeds; one run directory per cell.
/// Returns cells ranked by cumulative return, best first.
std::vector<SweepCell> run_sweep(const ExperimentConfig& config, const std::filesystem::path& out, int jobs = 0);

}  // namespace optibfm
