#include "optibfm/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "optibfm/errors.hpp"

namespace optibfm {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kEnvStreamId = 0x656e76;
constexpr std::uint64_t kAgentStreamId = 0x6167656e74;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  }
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) {
    throw std::runtime_error("write failed for '" + path.string() + "'");
  }
}

std::string metadata_line(const std::string& kind, const std::string& hash) {
  return "# optibfm " + kind + " config_hash=" + hash + "\n";
}

}  // namespace

std::vector<double> RunLog::regret_increments() const {
  std::vector<double> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(e.g_star - e.g_hat);
  return out;
}

std::vector<double> RunLog::cumulative_regret() const {
  std::vector<double> out;
  double acc = 0.0;
  for (double inc : regret_increments()) {
    acc += inc;
    out.push_back(acc);
  }
  return out;
}

std::int64_t RunLog::labels_used() const {
  std::int64_t n = 0;
  for (const auto& e : episodes) n += e.labels;
  return n;
}

EnvStream env_stream(std::uint64_t seed) { return EnvStream(mix_keys(seed, kEnvStreamId)); }

Rng agent_stream(std::uint64_t seed) { return make_stream(seed, kAgentStreamId); }

RunLog run_single(std::shared_ptr<const FeatureWorld> world, const RewardTask& task, const AgentConfig& agent_cfg,
                  std::uint64_t seed, int n_episodes, bool timing, std::optional<Estimator> initial,
                  std::size_t cache_capacity, double vi_tol) {
  SfOracle oracle(world, cache_capacity, vi_tol);
  const EnvStream env = env_stream(seed);
  Rng rng = agent_stream(seed);
  Agent agent = initial ? Agent(agent_cfg, std::move(*initial)) : Agent(agent_cfg, world->dim());

  RunLog log;
  log.agent = agent_cfg.name;
  log.seed = seed;
  log.run_id = agent_cfg.name + "-s" + std::to_string(seed);
  log.dim = world->dim();
  log.episodes.reserve(static_cast<std::size_t>(n_episodes));
  for (int k = 0; k < n_episodes; ++k) {
    log.episodes.push_back(agent.run_episode(oracle, task, env, k, rng, timing));
  }
  return log;
}

namespace {

struct Cell {
  std::size_t agent;
  std::uint64_t seed;
};

std::vector<Cell> make_cells(const ExperimentConfig& config) {
  std::vector<Cell> cells;
  for (std::size_t a = 0; a < config.agents.size(); ++a) {
    for (std::uint64_t s : config.seeds) cells.push_back({a, s});
  }
  return cells;
}

ExperimentResult finish_result(const ExperimentConfig& config, std::vector<RunLog> runs) {
  ExperimentResult result;
  result.config_hash = config_hash(config);
  result.runs = std::move(runs);
  result.summary = summarize(result.runs);
  return result;
}

}  // namespace

ExperimentResult run_experiment_serial(const ExperimentConfig& config) {
  config.validate();
  auto world = std::make_shared<const FeatureWorld>(make_random_world(config.world));
  const RewardTask task = make_task(config.task, config.world.dim);
  std::vector<RunLog> runs;
  for (const Cell& c : make_cells(config)) {
    runs.push_back(run_single(world, task, config.agents[c.agent], c.seed, config.n_episodes, config.timing, {},
                              config.cache_capacity, config.vi_tol));
  }
  return finish_result(config, std::move(runs));
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs) {
  config.validate();
  auto world = std::make_shared<const FeatureWorld>(make_random_world(config.world));
  const RewardTask task = make_task(config.task, config.world.dim);
  const std::vector<Cell> cells = make_cells(config);
  std::vector<RunLog> runs(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  const int threads = jobs > 0 ? jobs : omp_get_max_threads();

#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t i = 0; i < cells.size(); ++i) {
    try {
      runs[i] = run_single(world, task, config.agents[cells[i].agent], cells[i].seed, config.n_episodes,
                           config.timing, {}, config.cache_capacity, config.vi_tol);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return finish_result(config, std::move(runs));
}

std::vector<SummaryRow> summarize(const std::vector<RunLog>& runs) {
  std::vector<std::string> agents;
  for (const auto& r : runs) {
    if (std::find(agents.begin(), agents.end(), r.agent) == agents.end()) agents.push_back(r.agent);
  }
  std::vector<SummaryRow> out;
  for (const auto& name : agents) {
    std::vector<const RunLog*> group;
    for (const auto& r : runs) {
      if (r.agent == name) group.push_back(&r);
    }
    std::size_t n_ep = group.front()->episodes.size();
    for (const auto* r : group) n_ep = std::min(n_ep, r->episodes.size());
    std::vector<std::vector<double>> cum;
    for (const auto* r : group) cum.push_back(r->cumulative_regret());
    for (std::size_t k = 0; k < n_ep; ++k) {
      SummaryRow row;
      row.agent = name;
      row.episode = static_cast<std::int64_t>(k);
      row.n_seeds = static_cast<int>(group.size());
      row.g_min = row.regret_min = std::numeric_limits<double>::infinity();
      row.g_max = row.regret_max = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < group.size(); ++i) {
        const double g = group[i]->episodes[k].g_hat;
        const double reg = cum[i][k];
        row.g_mean += g;
        row.regret_mean += reg;
        row.g_min = std::min(row.g_min, g);
        row.g_max = std::max(row.g_max, g);
        row.regret_min = std::min(row.regret_min, reg);
        row.regret_max = std::max(row.regret_max, reg);
      }
      row.g_mean /= static_cast<double>(group.size());
      row.regret_mean /= static_cast<double>(group.size());
      out.push_back(row);
    }
  }
  return out;
}

void write_steps_csv(const std::vector<RunLog>& runs, const std::string& hash, bool timing, const fs::path& path) {
  auto out = open_out(path);
  out << metadata_line("steps", hash);
  const int d = runs.empty() ? 0 : runs.front().dim;
  out << "run_id,episode,step,state";
  for (int i = 0; i < d; ++i) out << ",z" << i;
  out << ",labeled,reward,d_gap,mahalanobis_zr,beta";
  if (timing) out << ",step_seconds";
  out << "\n";
  for (const auto& run : runs) {
    for (const auto& ep : run.episodes) {
      for (const auto& s : ep.steps) {
        out << run.run_id << ',' << s.episode << ',' << s.t << ',' << s.state;
        for (int i = 0; i < d; ++i) out << ',' << num(s.z(i));
        out << ',' << (s.labeled ? 1 : 0) << ',' << (s.reward ? num(*s.reward) : std::string()) << ','
            << num(s.d_gap) << ',' << num(s.mahal_zr) << ',' << num(s.beta);
        if (timing) out << ',' << num(s.seconds);
        out << '\n';
      }
    }
  }
  finish(out, path);
}

void write_episodes_csv(const std::vector<RunLog>& runs, const std::string& hash, const fs::path& path) {
  auto out = open_out(path);
  out << metadata_line("episodes", hash);
  out << "run_id,episode,G_hat,G_star,regret_cum,labels_cum,zhat_err,G_star_expected\n";
  for (const auto& run : runs) {
    const auto cum = run.cumulative_regret();
    std::int64_t labels = 0;
    for (std::size_t k = 0; k < run.episodes.size(); ++k) {
      const auto& e = run.episodes[k];
      labels += e.labels;
      out << run.run_id << ',' << e.episode << ',' << num(e.g_hat) << ',' << num(e.g_star) << ',' << num(cum[k])
          << ',' << labels << ',' << num(e.zhat_err) << ',' << num(e.g_star_expected) << '\n';
    }
  }
  finish(out, path);
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& hash, const fs::path& path) {
  auto out = open_out(path);
  out << metadata_line("summary", hash);
  out << "agent,episode,G_hat_mean,G_hat_min,G_hat_max,regret_cum_mean,regret_cum_min,regret_cum_max,n_seeds\n";
  for (const auto& r : rows) {
    out << r.agent << ',' << r.episode << ',' << num(r.g_mean) << ',' << num(r.g_min) << ',' << num(r.g_max) << ','
        << num(r.regret_mean) << ',' << num(r.regret_min) << ',' << num(r.regret_max) << ',' << r.n_seeds << '\n';
  }
  finish(out, path);
}

nlohmann::json world_snapshot(const ExperimentConfig& config, const FeatureWorld& world) {
  const RewardTask task = make_task(config.task, config.world.dim);
  const Vec& z = task.z_true();
  return {
      {"format", "optibfm-world"},
      {"version", 1},
      {"config_hash", config_hash(config)},
      {"config", to_json(config)},
      {"z_true", std::vector<double>(z.data(), z.data() + z.size())},
      {"world", world.to_json()},
  };
}

void write_outputs(const ExperimentResult& result, const ExperimentConfig& config, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
  }
  write_steps_csv(result.runs, result.config_hash, config.timing, dir / "steps.csv");
  write_episodes_csv(result.runs, result.config_hash, dir / "episodes.csv");
  write_summary_csv(result.summary, result.config_hash, dir / "summary.csv");
  const FeatureWorld world = make_random_world(config.world);
  auto out = open_out(dir / "world.json");
  out << world_snapshot(config, world).dump(1) << '\n';
  finish(out, dir / "world.json");
}

// ---------------------------------------------------------------------------

std::vector<Labeled> labeled_pairs(const RunLog& run) {
  std::vector<Labeled> out;
  for (const auto& e : run.episodes) {
    for (const auto& s : e.steps) {
      if (s.labeled) out.push_back({s.state, *s.reward});
    }
  }
  return out;
}

std::vector<Labeled> transition_pairs(const RunLog& run, const RewardTask& task, const FeatureWorld& world) {
  const EnvStream env = env_stream(run.seed);
  std::vector<Labeled> out;
  for (const auto& e : run.episodes) {
    for (const auto& s : e.steps) {
      const double r = s.reward ? *s.reward
                                : reward_sample(task, world, s.state, s.global_step, env.noise_normal(e.episode, s.t));
      out.push_back({s.state, r});
    }
  }
  return out;
}

std::vector<DataQualityRow> data_quality_eval(const std::vector<Labeled>& labeled, SfOracle& oracle,
                                              const RewardTask& task, const std::vector<std::int64_t>& budgets) {
  if (budgets.empty()) {
    throw std::invalid_argument("data-quality evaluation needs at least one budget");
  }
  const std::int64_t available = static_cast<std::int64_t>(labeled.size());
  const std::int64_t largest = *std::max_element(budgets.begin(), budgets.end());
  if (largest > available) {
    throw std::invalid_argument("budget " + std::to_string(largest) + " exceeds the " + std::to_string(available) +
                                " labeled transitions available");
  }
  const Vec& z_r = task.z_true();
  const double oracle_return = expected_return(oracle, z_r, z_r);
  std::vector<DataQualityRow> rows;
  for (std::int64_t n : budgets) {
    if (n < 1) throw std::invalid_argument("budgets must be >= 1");
    const std::vector<Labeled> prefix(labeled.begin(), labeled.begin() + n);
    const Vec z_n = infer_offline(prefix, oracle.world());
    DataQualityRow row;
    row.budget = n;
    row.expected_return = expected_return(oracle, z_n, z_r);
    row.relative = row.expected_return / oracle_return;
    rows.push_back(row);
  }
  return rows;
}

std::vector<TimingRow> timing_probe(const std::vector<AgentConfig>& agents, std::shared_ptr<const FeatureWorld> world,
                                    const RewardTask& task, int steps, int warmup) {
  std::vector<TimingRow> rows;
  const int episodes = std::max(1, (steps + world->horizon() - 1) / world->horizon());
  for (const auto& cfg : agents) {
    const RunLog run = run_single(world, task, cfg, 0, episodes, true);
    TimingRow row;
    row.agent = cfg.name;
    std::int64_t index = 0;
    for (const auto& e : run.episodes) {
      for (const auto& s : e.steps) {
        if (index++ < warmup) continue;
        row.mean_seconds += s.seconds;
        ++row.calls;
      }
    }
    if (row.calls > 0) row.mean_seconds /= static_cast<double>(row.calls);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw std::invalid_argument("CSV has no column '" + name + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open '" + path.string() + "'");
  }
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  CsvTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      table.metadata.push_back(line);
    } else if (table.header.empty()) {
      table.header = split(line);
    } else {
      table.rows.push_back(split(line));
    }
  }
  if (table.header.empty()) {
    throw std::runtime_error("'" + path.string() + "' has no header row");
  }
  return table;
}

std::vector<Labeled> labeled_pairs_from_csv(const CsvTable& steps, const std::string& run_id) {
  const auto c_run = steps.column("run_id");
  const auto c_state = steps.column("state");
  const auto c_labeled = steps.column("labeled");
  const auto c_reward = steps.column("reward");
  std::string wanted = run_id;
  if (wanted.empty() && !steps.rows.empty()) wanted = steps.rows.front().at(c_run);
  std::vector<Labeled> out;
  for (const auto& row : steps.rows) {
    if (row.at(c_run) != wanted || row.at(c_labeled) != "1") continue;
    out.push_back({std::stoi(row.at(c_state)), std::stod(row.at(c_reward))});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SweepCell> run_sweep(const ExperimentConfig& config, const fs::path& out, int jobs) {
  if (config.grid.empty()) {
    throw ConfigError("grid", "sweep needs at least one grid axis");
  }
  for (const auto& [axis, values] : config.grid) {
    if (values.empty()) throw ConfigError("grid." + axis, "grid axis is empty");
  }
  std::vector<std::string> axes;
  for (const auto& [axis, values] : config.grid) axes.push_back(axis);

  std::vector<std::map<std::string, double>> points(1);
  for (const auto& axis : axes) {
    std::vector<std::map<std::string, double>> next;
    for (const auto& p : points) {
      for (double v : config.grid.at(axis)) {
        auto q = p;
        q[axis] = v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }

  std::vector<SweepCell> cells;
  int index = 0;
  for (const auto& point : points) {
    for (std::uint64_t seed : config.seeds) {
      ExperimentConfig cell = config;
      cell.grid.clear();
      cell.seeds = {seed};
      for (auto& a : cell.agents) {
        if (!a.learns()) continue;
        for (const auto& [axis, v] : point) {
          if (axis == "beta" && a.variant == Variant::Ucb) a.confidence = ConfidenceSpec::fixed(v);
          if (axis == "sigma" && a.variant == Variant::Ts) a.ts_sigma = v;
          if (axis == "lambda") a.lambda = v;
          if (axis == "rho") a.rho = v;
          if (axis == "kappa") a.kappa = v;
        }
        a.validate();
      }
      char id[32];
      std::snprintf(id, sizeof id, "cell_%03d", index++);
      const ExperimentResult result = run_experiment(cell, jobs);
      write_outputs(result, cell, out / id);
      for (const auto& run : result.runs) {
        SweepCell sc;
        sc.cell_id = id;
        sc.params = point;
        sc.seed = seed;
        sc.agent = run.agent;
        for (const auto& e : run.episodes) sc.cumulative_return += e.g_hat;
        sc.labels = run.labels_used();
        cells.push_back(std::move(sc));
      }
    }
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const SweepCell& l, const SweepCell& r) { return l.cumulative_return > r.cumulative_return; });

  std::error_code ec;
  fs::create_directories(out, ec);
  auto summary = open_out(out / "sweep_summary.csv");
  summary << metadata_line("sweep", config_hash(config));
  summary << "rank,cell_id,agent,seed";
  for (const auto& axis : axes) summary << ',' << axis;
  summary << ",cumulative_return,labels\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    summary << i << ',' << c.cell_id << ',' << c.agent << ',' << c.seed;
    for (const auto& axis : axes) summary << ',' << num(c.params.at(axis));
    summary << ',' << num(c.cumulative_return) << ',' << c.labels << '\n';
  }
  finish(summary, out / "sweep_summary.csv");
  return cells;
}

}  // namespace optibfm
