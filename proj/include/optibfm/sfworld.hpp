#pragma once

// Synthetic ground truth: a finite MDP with per-state features and rewards that
// are exactly linear in those features, plus an exact successor-feature oracle
// playing the role of a perfectly trained behavior foundation model.

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "optibfm/linest.hpp"
#include "optibfm/rng.hpp"

namespace optibfm {

struct WorldConfig {
  int n_states = 20;
  int n_actions = 4;
  int dim = 8;
  double gamma = 0.95;
  int horizon = 0;  // 0 selects default_horizon(gamma)
  int branching = 3;
  double feat_bound = 1.0;
  std::uint64_t seed = 0;
};

/// Smallest H with gamma^H <= 1e-4.
int default_horizon(double gamma);

struct Transition {
  int next = 0;
  double prob = 0.0;
};

class FeatureWorld {
 public:
  FeatureWorld(int n_states, int n_actions, double gamma, int horizon, Vec init_dist,
               std::vector<std::vector<Transition>> successors, Mat features, double feat_bound);

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  int dim() const { return static_cast<int>(features_.rows()); }
  double gamma() const { return gamma_; }
  int horizon() const { return horizon_; }
  double feat_bound() const { return feat_bound_; }
  const Vec& init_dist() const { return init_dist_; }

  /// Column s holds phi(s).
  const Mat& features() const { return features_; }
  auto feature(int s) const { return features_.col(s); }

  std::span<const Transition> successors(int s, int a) const {
    return successors_[static_cast<std::size_t>(s * n_actions_ + a)];
  }
  /// Dense transition row P(. | s, a).
  Vec transition_row(int s, int a) const;

  /// Inverse-CDF draws from a single uniform in [0, 1).
  int sample_next(int s, int a, double u) const;
  int sample_initial(double u) const;

  nlohmann::json to_json() const;
  static FeatureWorld from_json(const nlohmann::json& j);

 private:
  int n_states_;
  int n_actions_;
  double gamma_;
  int horizon_;
  double feat_bound_;
  Vec init_dist_;
  std::vector<std::vector<Transition>> successors_;
  Mat features_;
};

FeatureWorld make_random_world(const WorldConfig& config);

// ---------------------------------------------------------------------------
// Tasks

struct ConstantDrift {};
struct PiecewiseDrift {
  std::vector<std::pair<std::int64_t, Vec>> schedule;  // (start step, z), sorted by step
};
struct LinearRampDrift {
  Vec start_z;
  Vec end_z;
  std::int64_t burn_in = 0;
  std::int64_t ramp = 1;
};
using Drift = std::variant<ConstantDrift, PiecewiseDrift, LinearRampDrift>;

class RewardTask {
 public:
  RewardTask(Vec z_true, double noise_sigma, double s_bound, Drift drift = ConstantDrift{});

  const Vec& z_true() const { return z_true_; }
  double noise_sigma() const { return noise_sigma_; }
  double s_bound() const { return s_bound_; }
  const Drift& drift() const { return drift_; }
  bool stationary() const { return std::holds_alternative<ConstantDrift>(drift_); }

  /// z_r at global step `step`.
  Vec drift_value(std::int64_t step) const;

 private:
  Vec z_true_;
  double noise_sigma_;
  double s_bound_;
  Drift drift_;
};

double noiseless_reward(const RewardTask& task, const FeatureWorld& world, int state, std::int64_t step);
/// phi(s)^T z_r(step) + noise_sigma * standard_normal.
double reward_sample(const RewardTask& task, const FeatureWorld& world, int state, std::int64_t step,
                     double standard_normal);
double reward_sample(const RewardTask& task, const FeatureWorld& world, int state, std::int64_t step,
                     Rng& rng);

/// Task vector of norm `s_bound` in a uniformly random direction.
Vec random_task_vector(int dim, double s_bound, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Policies and successor features

using PolicyTable = std::vector<int>;

/// Optimal stationary policy for reward r(s) = phi(s)^T z by policy iteration;
/// actions within the tolerance of the best go to the lowest index.
PolicyTable optimal_policy(const FeatureWorld& world, const Vec& z, double vi_tol = 1e-10,
                           int max_iterations = 1000);
/// Value-iteration reference for the same policy (strict argmax, lowest index on exact ties).
PolicyTable optimal_policy_vi(const FeatureWorld& world, const Vec& z, double vi_tol = 1e-10,
                              int max_iterations = 200000);

struct SfTable {
  Mat state_sf;   // d x S, psi(s) = psi(s, pi(s))
  Mat action_sf;  // d x (S*A), column s*A + a
};

/// Exact H-step successor features of `policy`.
SfTable successor_features(const FeatureWorld& world, const PolicyTable& policy);

struct OracleEntry {
  PolicyTable policy;
  SfTable sf;
};

struct OracleAnswer {
  Vec psi;
  int action = 0;
};

/// Memoizing policy/SF oracle keyed on the exact bit pattern of z. Queries are
/// serialized by an internal mutex so a shared instance stays linearizable.
class SfOracle {
 public:
  explicit SfOracle(std::shared_ptr<const FeatureWorld> world, std::size_t capacity = 4096,
                    double vi_tol = 1e-10);

  OracleAnswer query(int state, const Vec& z);
  std::shared_ptr<const OracleEntry> entry(const Vec& z);

  const FeatureWorld& world() const { return *world_; }
  std::shared_ptr<const FeatureWorld> world_ptr() const { return world_; }
  double vi_tol() const { return vi_tol_; }
  std::size_t computations() const;
  std::size_t cache_size() const;

 private:
  using Key = std::string;
  struct Slot {
    std::shared_ptr<const OracleEntry> value;
    std::list<Key>::iterator lru_pos;
  };

  std::shared_ptr<const FeatureWorld> world_;
  std::size_t capacity_;
  double vi_tol_;
  mutable std::mutex mutex_;
  std::list<Key> lru_;
  std::unordered_map<Key, Slot> slots_;
  std::size_t computations_ = 0;
};

/// E_{s0 ~ mu0}[psi(s0, z_policy)]^T z_reward: exact expected H-step return of
/// pi_{z_policy} under reward z_reward.
double expected_return(SfOracle& oracle, const Vec& z_policy, const Vec& z_reward);

}  // namespace optibfm
