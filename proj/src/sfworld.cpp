#include "optibfm/sfworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include <Eigen/LU>

namespace optibfm {

int default_horizon(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0, 1)");
  }
  return static_cast<int>(std::ceil(std::log(1e-4) / std::log(gamma)));
}

FeatureWorld::FeatureWorld(int n_states, int n_actions, double gamma, int horizon, Vec init_dist,
                           std::vector<std::vector<Transition>> successors, Mat features,
                           double feat_bound)
    : n_states_(n_states),
      n_actions_(n_actions),
      gamma_(gamma),
      horizon_(horizon),
      feat_bound_(feat_bound),
      init_dist_(std::move(init_dist)),
      successors_(std::move(successors)),
      features_(std::move(features)) {
  if (n_states < 1 || n_actions < 1) {
    throw std::invalid_argument("world needs at least one state and one action");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1)");
  }
  if (horizon < 1) {
    throw std::invalid_argument("horizon must be >= 1");
  }
  if (features_.cols() != n_states || features_.rows() < 1) {
    throw std::invalid_argument("feature matrix must be d x n_states");
  }
  if (init_dist_.size() != n_states) {
    throw std::invalid_argument("initial distribution has wrong length");
  }
  if (successors_.size() != static_cast<std::size_t>(n_states * n_actions)) {
    throw std::invalid_argument("transition table has wrong size");
  }
  auto check_dist = [](double total, bool nonneg, const std::string& what) {
    if (!nonneg || std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument(what + " is not a probability distribution");
    }
  };
  check_dist(init_dist_.sum(), (init_dist_.array() >= 0.0).all(), "initial distribution");
  for (const auto& row : successors_) {
    double total = 0.0;
    bool ok = !row.empty();
    for (const auto& tr : row) {
      ok = ok && tr.prob >= 0.0 && tr.next >= 0 && tr.next < n_states;
      total += tr.prob;
    }
    check_dist(total, ok, "transition row");
  }
  for (int s = 0; s < n_states; ++s) {
    if (features_.col(s).norm() > feat_bound * (1.0 + 1e-12)) {
      throw std::invalid_argument("feature of state " + std::to_string(s) + " exceeds feat_bound");
    }
  }
}

Vec FeatureWorld::transition_row(int s, int a) const {
  Vec row = Vec::Zero(n_states_);
  for (const auto& tr : successors(s, a)) {
    row(tr.next) += tr.prob;
  }
  return row;
}

int FeatureWorld::sample_next(int s, int a, double u) const {
  const auto row = successors(s, a);
  double acc = 0.0;
  for (const auto& tr : row) {
    acc += tr.prob;
    if (u < acc) {
      return tr.next;
    }
  }
  return row.back().next;
}

int FeatureWorld::sample_initial(double u) const {
  double acc = 0.0;
  for (int s = 0; s < n_states_; ++s) {
    acc += init_dist_(s);
    if (u < acc) {
      return s;
    }
  }
  return n_states_ - 1;
}

nlohmann::json FeatureWorld::to_json() const {
  nlohmann::json transitions = nlohmann::json::array();
  for (int s = 0; s < n_states_; ++s) {
    nlohmann::json per_action = nlohmann::json::array();
    for (int a = 0; a < n_actions_; ++a) {
      const Vec row = transition_row(s, a);
      per_action.push_back(std::vector<double>(row.data(), row.data() + row.size()));
    }
    transitions.push_back(std::move(per_action));
  }
  nlohmann::json feats = nlohmann::json::array();
  for (int s = 0; s < n_states_; ++s) {
    const Vec f = features_.col(s);
    feats.push_back(std::vector<double>(f.data(), f.data() + f.size()));
  }
  return {
      {"n_states", n_states_},
      {"n_actions", n_actions_},
      {"dim", dim()},
      {"gamma", gamma_},
      {"horizon", horizon_},
      {"feat_bound", feat_bound_},
      {"init_dist", std::vector<double>(init_dist_.data(), init_dist_.data() + init_dist_.size())},
      {"transition", std::move(transitions)},
      {"features", std::move(feats)},
  };
}

FeatureWorld FeatureWorld::from_json(const nlohmann::json& j) {
  const int n_states = j.at("n_states").get<int>();
  const int n_actions = j.at("n_actions").get<int>();
  const int dim = j.at("dim").get<int>();
  const auto init = j.at("init_dist").get<std::vector<double>>();
  Vec init_dist = Eigen::Map<const Vec>(init.data(), static_cast<Eigen::Index>(init.size()));
  std::vector<std::vector<Transition>> successors(static_cast<std::size_t>(n_states * n_actions));
  const auto& tensor = j.at("transition");
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      const auto row = tensor.at(static_cast<std::size_t>(s)).at(static_cast<std::size_t>(a)).get<std::vector<double>>();
      auto& out = successors[static_cast<std::size_t>(s * n_actions + a)];
      for (int n = 0; n < static_cast<int>(row.size()); ++n) {
        if (row[static_cast<std::size_t>(n)] != 0.0) {
          out.push_back({n, row[static_cast<std::size_t>(n)]});
        }
      }
    }
  }
  Mat features(dim, n_states);
  const auto& feats = j.at("features");
  for (int s = 0; s < n_states; ++s) {
    const auto f = feats.at(static_cast<std::size_t>(s)).get<std::vector<double>>();
    if (f.size() != static_cast<std::size_t>(dim)) {
      throw std::invalid_argument("feature vector length mismatch in world snapshot");
    }
    for (int i = 0; i < dim; ++i) {
      features(i, s) = f[static_cast<std::size_t>(i)];
    }
  }
  return FeatureWorld(n_states, n_actions, j.at("gamma").get<double>(), j.at("horizon").get<int>(),
                      std::move(init_dist), std::move(successors), std::move(features),
                      j.at("feat_bound").get<double>());
}

FeatureWorld make_random_world(const WorldConfig& config) {
  if (config.n_states < 1 || config.n_actions < 1 || config.dim < 1) {
    throw std::invalid_argument("world config needs positive state, action and feature counts");
  }
  if (config.branching < 1 || config.branching > config.n_states) {
    throw std::invalid_argument("branching must lie in [1, n_states]");
  }
  if (!(config.feat_bound > 0.0)) {
    throw std::invalid_argument("feat_bound must be positive");
  }
  if (!(config.gamma >= 0.0 && config.gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in [0, 1)");
  }
  const int horizon = config.horizon > 0 ? config.horizon : default_horizon(config.gamma);

  Rng rng(mix_keys(config.seed, 0x776f726c64));
  std::gamma_distribution<double> gamma1(1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<int> all_states(static_cast<std::size_t>(config.n_states));
  std::iota(all_states.begin(), all_states.end(), 0);

  std::vector<std::vector<Transition>> successors;
  successors.reserve(static_cast<std::size_t>(config.n_states * config.n_actions));
  for (int s = 0; s < config.n_states; ++s) {
    for (int a = 0; a < config.n_actions; ++a) {
      std::vector<int> picks;
      std::sample(all_states.begin(), all_states.end(), std::back_inserter(picks), config.branching, rng);
      std::vector<double> weights;
      double total = 0.0;
      for (int b = 0; b < config.branching; ++b) {
        weights.push_back(gamma1(rng) + 1e-12);
        total += weights.back();
      }
      std::vector<Transition> row;
      for (int b = 0; b < config.branching; ++b) {
        row.push_back({picks[static_cast<std::size_t>(b)], weights[static_cast<std::size_t>(b)] / total});
      }
      successors.push_back(std::move(row));
    }
  }

  Mat features(config.dim, config.n_states);
  for (int s = 0; s < config.n_states; ++s) {
    Vec dir(config.dim);
    double norm = 0.0;
    do {
      for (int i = 0; i < config.dim; ++i) {
        dir(i) = normal(rng);
      }
      norm = dir.norm();
    } while (norm == 0.0);
    const double radius = config.feat_bound * (0.5 + 0.5 * uniform(rng));
    features.col(s) = dir * (radius / norm);
  }

  Vec init = Vec::Constant(config.n_states, 1.0 / config.n_states);
  return FeatureWorld(config.n_states, config.n_actions, config.gamma, horizon, std::move(init),
                      std::move(successors), std::move(features), config.feat_bound);
}

// ---------------------------------------------------------------------------

RewardTask::RewardTask(Vec z_true, double noise_sigma, double s_bound, Drift drift)
    : z_true_(std::move(z_true)), noise_sigma_(noise_sigma), s_bound_(s_bound), drift_(std::move(drift)) {
  if (!(noise_sigma >= 0.0)) {
    throw std::invalid_argument("noise_sigma must be >= 0");
  }
  if (!(s_bound > 0.0)) {
    throw std::invalid_argument("s_bound must be positive");
  }
  const double slack = s_bound * (1.0 + 1e-12);
  auto check = [&](const Vec& z, const char* what) {
    if (z.size() != z_true_.size()) {
      throw std::invalid_argument(std::string(what) + " has the wrong dimension");
    }
    if (z.norm() > slack) {
      throw std::invalid_argument(std::string(what) + " exceeds s_bound");
    }
  };
  check(z_true_, "z_true");
  if (auto* pw = std::get_if<PiecewiseDrift>(&drift_)) {
    if (pw->schedule.empty()) {
      throw std::invalid_argument("piecewise drift schedule is empty");
    }
    std::stable_sort(pw->schedule.begin(), pw->schedule.end(),
                     [](const auto& l, const auto& r) { return l.first < r.first; });
    for (const auto& [step, z] : pw->schedule) {
      check(z, "piecewise schedule entry");
    }
  } else if (auto* ramp = std::get_if<LinearRampDrift>(&drift_)) {
    check(ramp->start_z, "ramp start_z");
    check(ramp->end_z, "ramp end_z");
    if (ramp->burn_in < 0 || ramp->ramp < 1) {
      throw std::invalid_argument("ramp needs burn_in >= 0 and ramp_steps >= 1");
    }
  }
}

Vec RewardTask::drift_value(std::int64_t step) const {
  if (step < 0) {
    throw std::invalid_argument("step must be >= 0");
  }
  if (const auto* pw = std::get_if<PiecewiseDrift>(&drift_)) {
    const Vec* current = &pw->schedule.front().second;
    for (const auto& [start, z] : pw->schedule) {
      if (start <= step) {
        current = &z;
      }
    }
    return *current;
  }
  if (const auto* ramp = std::get_if<LinearRampDrift>(&drift_)) {
    if (step <= ramp->burn_in) {
      return ramp->start_z;
    }
    if (step >= ramp->burn_in + ramp->ramp) {
      return ramp->end_z;
    }
    const double frac = static_cast<double>(step - ramp->burn_in) / static_cast<double>(ramp->ramp);
    return (1.0 - frac) * ramp->start_z + frac * ramp->end_z;
  }
  return z_true_;
}

double noiseless_reward(const RewardTask& task, const FeatureWorld& world, int state, std::int64_t step) {
  if (task.stationary()) {
    return world.feature(state).dot(task.z_true());
  }
  return world.feature(state).dot(task.drift_value(step));
}

double reward_sample(const RewardTask& task, const FeatureWorld& world, int state, std::int64_t step,
                     double standard_normal) {
  return noiseless_reward(task, world, state, step) + task.noise_sigma() * standard_normal;
}

double reward_sample(const RewardTask& task, const FeatureWorld& world, int state, std::int64_t step,
                     Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return reward_sample(task, world, state, step, normal(rng));
}

Vec random_task_vector(int dim, double s_bound, std::uint64_t seed) {
  Rng rng(mix_keys(seed, 0x7461736b));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec z(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) {
      z(i) = normal(rng);
    }
    norm = z.norm();
  } while (norm == 0.0);
  return z * (s_bound / norm);
}

// ---------------------------------------------------------------------------

PolicyTable optimal_policy(const FeatureWorld& world, const Vec& z, double vi_tol, int max_iterations) {
  if (z.size() != world.dim()) {
    throw std::invalid_argument("task vector dimension does not match the world");
  }
  const int S = world.n_states();
  const int A = world.n_actions();
  const double gamma = world.gamma();
  const Vec reward = world.features().transpose() * z;
  const double tol = vi_tol * std::max(1.0, reward.cwiseAbs().maxCoeff());

  auto continuation = [&](const Vec& value, int s, int a) {
    double cont = 0.0;
    for (const auto& tr : world.successors(s, a)) cont += tr.prob * value(tr.next);
    return cont;
  };

  PolicyTable policy(static_cast<std::size_t>(S), 0);
  Mat system(S, S);
  Vec value(S);
  for (int it = 0; it < max_iterations; ++it) {
    system.setIdentity();
    for (int s = 0; s < S; ++s) {
      for (const auto& tr : world.successors(s, policy[static_cast<std::size_t>(s)])) {
        system(s, tr.next) -= gamma * tr.prob;
      }
    }
    value = system.partialPivLu().solve(reward);
    bool stable = true;
    for (int s = 0; s < S; ++s) {
      const auto si = static_cast<std::size_t>(s);
      const double current = continuation(value, s, policy[si]);
      for (int a = 0; a < A; ++a) {
        // switch only on a clear improvement so evaluation roundoff cannot cycle
        if (continuation(value, s, a) > current + tol) {
          stable = false;
          break;
        }
      }
      if (!stable) break;
    }
    if (stable) break;
    if (it + 1 == max_iterations) {
      throw std::runtime_error("policy iteration did not converge within the iteration cap");
    }
    for (int s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < A; ++a) {
        const double cont = continuation(value, s, a);
        if (cont > best) {
          best = cont;
          policy[static_cast<std::size_t>(s)] = a;
        }
      }
    }
  }
  // lowest action among the near-optimal ones
  for (int s = 0; s < S; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) best = std::max(best, continuation(value, s, a));
    for (int a = 0; a < A; ++a) {
      if (continuation(value, s, a) >= best - tol) {
        policy[static_cast<std::size_t>(s)] = a;
        break;
      }
    }
  }
  return policy;
}

PolicyTable optimal_policy_vi(const FeatureWorld& world, const Vec& z, double vi_tol, int max_iterations) {
  if (z.size() != world.dim()) {
    throw std::invalid_argument("task vector dimension does not match the world");
  }
  const int S = world.n_states();
  const int A = world.n_actions();
  const double gamma = world.gamma();
  const Vec reward = world.features().transpose() * z;
  const double tol = vi_tol * std::max(1.0, reward.cwiseAbs().maxCoeff());

  Vec value = Vec::Zero(S);
  Vec next_value(S);
  bool converged = false;
  for (int it = 0; it < max_iterations; ++it) {
    double change = 0.0;
    for (int s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < A; ++a) {
        double cont = 0.0;
        for (const auto& tr : world.successors(s, a)) {
          cont += tr.prob * value(tr.next);
        }
        best = std::max(best, cont);
      }
      next_value(s) = reward(s) + gamma * best;
      change = std::max(change, std::abs(next_value(s) - value(s)));
    }
    value.swap(next_value);
    if (change < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw std::runtime_error("value iteration did not converge within the iteration cap");
  }

  PolicyTable policy(static_cast<std::size_t>(S), 0);
  for (int s = 0; s < S; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) {
      double cont = 0.0;
      for (const auto& tr : world.successors(s, a)) {
        cont += tr.prob * value(tr.next);
      }
      if (cont > best) {
        best = cont;
        policy[static_cast<std::size_t>(s)] = a;
      }
    }
  }
  return policy;
}

SfTable successor_features(const FeatureWorld& world, const PolicyTable& policy) {
  const int S = world.n_states();
  const int A = world.n_actions();
  const int d = world.dim();
  const double gamma = world.gamma();
  if (policy.size() != static_cast<std::size_t>(S)) {
    throw std::invalid_argument("policy table has the wrong number of states");
  }
  for (int a : policy) {
    if (a < 0 || a >= A) {
      throw std::invalid_argument("policy selects an invalid action");
    }
  }
  const Mat& phi = world.features();

  // prev holds the (h-1)-step state SF under the policy.
  Mat prev = Mat::Zero(d, S);
  Mat cur(d, S);
  for (int h = 1; h < world.horizon(); ++h) {
    for (int s = 0; s < S; ++s) {
      auto col = cur.col(s);
      col.setZero();
      for (const auto& tr : world.successors(s, policy[static_cast<std::size_t>(s)])) {
        col.noalias() += tr.prob * prev.col(tr.next);
      }
      col = phi.col(s) + gamma * col;
    }
    prev.swap(cur);
  }

  SfTable out;
  out.action_sf.resize(d, S * A);
  out.state_sf.resize(d, S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      Vec cont = Vec::Zero(d);
      for (const auto& tr : world.successors(s, a)) {
        cont.noalias() += tr.prob * prev.col(tr.next);
      }
      out.action_sf.col(s * A + a) = phi.col(s) + gamma * cont;
    }
    out.state_sf.col(s) = out.action_sf.col(s * A + policy[static_cast<std::size_t>(s)]);
  }
  return out;
}

// ---------------------------------------------------------------------------

SfOracle::SfOracle(std::shared_ptr<const FeatureWorld> world, std::size_t capacity, double vi_tol)
    : world_(std::move(world)), capacity_(std::max<std::size_t>(capacity, 1)), vi_tol_(vi_tol) {
  if (!world_) {
    throw std::invalid_argument("oracle needs a world");
  }
}

std::shared_ptr<const OracleEntry> SfOracle::entry(const Vec& z) {
  if (z.size() != world_->dim()) {
    throw std::invalid_argument("task vector dimension does not match the world");
  }
  Key key(reinterpret_cast<const char*>(z.data()), static_cast<std::size_t>(z.size()) * sizeof(double));
  std::lock_guard lock(mutex_);
  if (auto it = slots_.find(key); it != slots_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second.lru_pos);
    return it->second.value;
  }
  auto value = std::make_shared<OracleEntry>();
  value->policy = optimal_policy(*world_, z, vi_tol_);
  value->sf = successor_features(*world_, value->policy);
  ++computations_;
  if (slots_.size() >= capacity_) {
    slots_.erase(lru_.back());
    lru_.pop_back();
  }
  lru_.push_front(key);
  slots_.emplace(std::move(key), Slot{value, lru_.begin()});
  return value;
}

OracleAnswer SfOracle::query(int state, const Vec& z) {
  if (state < 0 || state >= world_->n_states()) {
    throw std::out_of_range("state index out of range");
  }
  const auto e = entry(z);
  return {e->sf.state_sf.col(state), e->policy[static_cast<std::size_t>(state)]};
}

std::size_t SfOracle::computations() const {
  std::lock_guard lock(mutex_);
  return computations_;
}

std::size_t SfOracle::cache_size() const {
  std::lock_guard lock(mutex_);
  return slots_.size();
}

double expected_return(SfOracle& oracle, const Vec& z_policy, const Vec& z_reward) {
  const auto e = oracle.entry(z_policy);
  return (e->sf.state_sf * oracle.world().init_dist()).dot(z_reward);
}

}  // namespace optibfm
