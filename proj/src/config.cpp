#include "optibfm/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "optibfm/errors.hpp"

namespace optibfm {

namespace {

using nlohmann::json;

const json* find(const json& obj, const std::string& key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

template <typename T>
T get_field(const json& obj, const std::string& key, const std::string& path) {
  const json* v = find(obj, key);
  if (!v) {
    throw ConfigError(path, "missing required field");
  }
  try {
    return v->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("wrong type: ") + e.what());
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, const std::string& path, T fallback) {
  if (!find(obj, key)) return fallback;
  return get_field<T>(obj, key, path);
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }
std::vector<double> from_vec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

ConfidenceSpec parse_confidence(const json& j, const std::string& path) {
  const auto mode = get_or<std::string>(j, "mode", path + ".mode", "fixed");
  try {
    if (mode == "fixed") {
      return ConfidenceSpec::fixed(get_or<double>(j, "beta", path + ".beta", 0.1));
    }
    if (mode == "theoretical") {
      return ConfidenceSpec::theoretical(get_field<double>(j, "delta", path + ".delta"),
                                         get_field<double>(j, "s_bound", path + ".s_bound"),
                                         get_field<double>(j, "sigma", path + ".sigma"));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".mode", "expected 'fixed' or 'theoretical'");
}

AgentConfig parse_agent(const json& j, const std::string& path) {
  if (!j.is_object()) {
    throw ConfigError(path, "agent entry must be an object");
  }
  AgentConfig a;
  a.name = get_field<std::string>(j, "name", path + ".name");
  try {
    a.variant = parse_variant(get_field<std::string>(j, "variant", path + ".variant"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".variant", e.what());
  }
  a.candidates = get_or<int>(j, "candidates", path + ".candidates", a.candidates);
  a.radius_mult = get_or<double>(j, "radius_mult", path + ".radius_mult", a.radius_mult);
  if (const json* c = find(j, "confidence")) {
    a.confidence = parse_confidence(*c, path + ".confidence");
  }
  a.ts_sigma = get_or<double>(j, "ts_sigma", path + ".ts_sigma", a.ts_sigma);
  if (const json* k = find(j, "kappa"); k && !k->is_null()) {
    a.kappa = get_field<double>(j, "kappa", path + ".kappa");
  }
  a.episodic = get_or<bool>(j, "episodic", path + ".episodic", a.episodic);
  a.normalize_z = get_or<bool>(j, "normalize_z", path + ".normalize_z", a.normalize_z);
  a.lambda = get_or<double>(j, "lambda", path + ".lambda", a.lambda);
  a.rho = get_or<double>(j, "rho", path + ".rho", a.rho);
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return a;
}

json confidence_json(const ConfidenceSpec& c) {
  if (c.is_fixed()) {
    return {{"mode", "fixed"}, {"beta", c.fixed_radius().beta * c.scale()}};
  }
  const auto& t = c.theoretical_radius();
  return {{"mode", "theoretical"}, {"delta", t.delta}, {"s_bound", t.s_bound}, {"sigma", t.sigma},
          {"scale", c.scale()}};
}

}  // namespace

RewardTask make_task(const TaskConfig& config, int dim) {
  Vec z = config.z_true ? *config.z_true : random_task_vector(dim, config.s_bound, config.seed);
  const auto& dc = config.drift;
  if (dc.kind == "constant") {
    return RewardTask(z, config.noise_sigma, config.s_bound);
  }
  if (dc.kind == "piecewise") {
    PiecewiseDrift pw{dc.schedule};
    return RewardTask(z, config.noise_sigma, config.s_bound, pw);
  }
  if (dc.kind == "ramp") {
    Vec end = dc.end_z ? *dc.end_z : random_task_vector(dim, config.s_bound, dc.end_seed);
    return RewardTask(z, config.noise_sigma, config.s_bound, LinearRampDrift{z, end, dc.burn_in, dc.ramp_steps});
  }
  throw std::invalid_argument("unknown drift kind '" + dc.kind + "'");
}

void ExperimentConfig::validate() const {
  if (agents.empty()) {
    throw ConfigError("agents", "at least one agent is required");
  }
  std::set<std::string> names;
  for (const auto& a : agents) {
    if (!names.insert(a.name).second) {
      throw ConfigError("agents", "duplicate agent name '" + a.name + "'");
    }
  }
  if (seeds.empty()) {
    throw ConfigError("seeds", "at least one seed is required");
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds", "seeds must be distinct");
  }
  if (n_episodes < 1) {
    throw ConfigError("n_episodes", "must be >= 1");
  }
  if (world.n_states < 1) throw ConfigError("world.n_states", "must be >= 1");
  if (world.n_actions < 1) throw ConfigError("world.n_actions", "must be >= 1");
  if (world.dim < 1) throw ConfigError("world.dim", "must be >= 1");
  if (!(world.gamma > 0.0 && world.gamma < 1.0)) throw ConfigError("world.gamma", "must lie in (0, 1)");
  if (world.branching < 1 || world.branching > world.n_states) {
    throw ConfigError("world.branching", "must lie in [1, n_states]");
  }
  if (!(world.feat_bound > 0.0)) throw ConfigError("world.feat_bound", "must be positive");
  if (world.horizon < 0) throw ConfigError("world.horizon", "must be >= 0 (0 = automatic)");
  if (task.z_true && task.z_true->size() != world.dim) {
    throw ConfigError("task.z_true", "length must equal world.dim");
  }
  try {
    make_task(task, world.dim);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("task", e.what());
  }
  static const std::set<std::string> axes = {"beta", "sigma", "lambda", "rho", "kappa"};
  for (const auto& [axis, values] : grid) {
    if (!axes.count(axis)) {
      throw ConfigError("grid." + axis, "unknown sweep axis");
    }
  }
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) {
    throw ConfigError("", "config root must be an object");
  }
  ExperimentConfig c;
  const json* w = find(j, "world");
  if (!w) throw ConfigError("world", "missing required field");
  c.world.n_states = get_field<int>(*w, "n_states", "world.n_states");
  c.world.n_actions = get_field<int>(*w, "n_actions", "world.n_actions");
  c.world.dim = get_field<int>(*w, "dim", "world.dim");
  c.world.gamma = get_field<double>(*w, "gamma", "world.gamma");
  c.world.horizon = get_or<int>(*w, "horizon", "world.horizon", 0);
  c.world.branching = get_or<int>(*w, "branching", "world.branching", c.world.branching);
  c.world.feat_bound = get_or<double>(*w, "feat_bound", "world.feat_bound", c.world.feat_bound);
  c.world.seed = get_or<std::uint64_t>(*w, "seed", "world.seed", 0);

  if (const json* t = find(j, "task")) {
    c.task.seed = get_or<std::uint64_t>(*t, "seed", "task.seed", 0);
    c.task.s_bound = get_or<double>(*t, "s_bound", "task.s_bound", 1.0);
    c.task.noise_sigma = get_or<double>(*t, "noise_sigma", "task.noise_sigma", 0.1);
    if (find(*t, "z_true")) {
      c.task.z_true = to_vec(get_field<std::vector<double>>(*t, "z_true", "task.z_true"));
    }
    if (const json* d = find(*t, "drift")) {
      auto& dc = c.task.drift;
      dc.kind = get_or<std::string>(*d, "kind", "task.drift.kind", "constant");
      if (dc.kind == "piecewise") {
        const json* sched = find(*d, "schedule");
        if (!sched || !sched->is_array() || sched->empty()) {
          throw ConfigError("task.drift.schedule", "piecewise drift needs a nonempty schedule");
        }
        for (std::size_t i = 0; i < sched->size(); ++i) {
          const std::string p = "task.drift.schedule[" + std::to_string(i) + "]";
          const json& e = (*sched)[i];
          const auto step = get_field<std::int64_t>(e, "step", p + ".step");
          Vec z = find(e, "z") ? to_vec(get_field<std::vector<double>>(e, "z", p + ".z"))
                               : random_task_vector(c.world.dim, c.task.s_bound,
                                                    get_field<std::uint64_t>(e, "seed", p + ".seed"));
          dc.schedule.emplace_back(step, std::move(z));
        }
      } else if (dc.kind == "ramp") {
        if (find(*d, "end_z")) {
          dc.end_z = to_vec(get_field<std::vector<double>>(*d, "end_z", "task.drift.end_z"));
        }
        dc.end_seed = get_or<std::uint64_t>(*d, "end_seed", "task.drift.end_seed", 1);
        dc.burn_in = get_field<std::int64_t>(*d, "burn_in", "task.drift.burn_in");
        dc.ramp_steps = get_field<std::int64_t>(*d, "ramp_steps", "task.drift.ramp_steps");
      } else if (dc.kind != "constant") {
        throw ConfigError("task.drift.kind", "expected constant, piecewise or ramp");
      }
    }
  }

  const json* agents = find(j, "agents");
  if (!agents) throw ConfigError("agents", "missing required field");
  if (!agents->is_array()) throw ConfigError("agents", "must be an array");
  for (std::size_t i = 0; i < agents->size(); ++i) {
    c.agents.push_back(parse_agent((*agents)[i], "agents[" + std::to_string(i) + "]"));
  }
  c.n_episodes = get_field<int>(j, "n_episodes", "n_episodes");
  c.seeds = get_field<std::vector<std::uint64_t>>(j, "seeds", "seeds");
  c.output = get_or<std::string>(j, "output", "output", c.output);
  c.timing = get_or<bool>(j, "timing", "timing", false);
  c.vi_tol = get_or<double>(j, "vi_tol", "vi_tol", c.vi_tol);
  c.cache_capacity = get_or<std::size_t>(j, "cache_capacity", "cache_capacity", c.cache_capacity);
  if (const json* g = find(j, "grid")) {
    if (!g->is_object()) throw ConfigError("grid", "must be an object of axis -> list");
    for (auto it = g->begin(); it != g->end(); ++it) {
      c.grid[it.key()] = get_field<std::vector<double>>(*g, it.key(), "grid." + it.key());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("", "cannot open config file '" + path + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min(e.byte, text.size());
    const long line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ConfigError("", "syntax error at line " + std::to_string(line) + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const AgentConfig& a) {
  json j = {
      {"name", a.name},
      {"variant", to_string(a.variant)},
      {"candidates", a.candidates},
      {"radius_mult", a.radius_mult},
      {"confidence", confidence_json(a.confidence)},
      {"ts_sigma", a.ts_sigma},
      {"episodic", a.episodic},
      {"normalize_z", a.normalize_z},
      {"lambda", a.lambda},
      {"rho", a.rho},
  };
  j["kappa"] = a.kappa ? json(*a.kappa) : json(nullptr);
  return j;
}

json to_json(const ExperimentConfig& c) {
  json task = {
      {"seed", c.task.seed},
      {"s_bound", c.task.s_bound},
      {"noise_sigma", c.task.noise_sigma},
  };
  if (c.task.z_true) task["z_true"] = from_vec(*c.task.z_true);
  json drift = {{"kind", c.task.drift.kind}};
  if (c.task.drift.kind == "piecewise") {
    json sched = json::array();
    for (const auto& [step, z] : c.task.drift.schedule) {
      sched.push_back({{"step", step}, {"z", from_vec(z)}});
    }
    drift["schedule"] = sched;
  } else if (c.task.drift.kind == "ramp") {
    if (c.task.drift.end_z) drift["end_z"] = from_vec(*c.task.drift.end_z);
    drift["end_seed"] = c.task.drift.end_seed;
    drift["burn_in"] = c.task.drift.burn_in;
    drift["ramp_steps"] = c.task.drift.ramp_steps;
  }
  task["drift"] = drift;
  json agents = json::array();
  for (const auto& a : c.agents) agents.push_back(to_json(a));
  json j = {
      {"world",
       {{"n_states", c.world.n_states},
        {"n_actions", c.world.n_actions},
        {"dim", c.world.dim},
        {"gamma", c.world.gamma},
        {"horizon", c.world.horizon},
        {"branching", c.world.branching},
        {"feat_bound", c.world.feat_bound},
        {"seed", c.world.seed}}},
      {"task", task},
      {"agents", agents},
      {"n_episodes", c.n_episodes},
      {"seeds", c.seeds},
      {"timing", c.timing},
      {"vi_tol", c.vi_tol},
      {"cache_capacity", c.cache_capacity},
  };
  if (!c.grid.empty()) j["grid"] = c.grid;
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace optibfm
