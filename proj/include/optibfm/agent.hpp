#pragma once

// Online task inference decision rules: optimistic selection over the
// confidence ellipsoid (random shooting), posterior sampling, the episodic
// variant, warm starts, offline projection and information-gated labeling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "optibfm/linest.hpp"
#include "optibfm/rng.hpp"
#include "optibfm/sfworld.hpp"

namespace optibfm {

enum class Variant { Ucb, Ts, Random, Oracle };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct AgentConfig {
  std::string name = "ucb";
  Variant variant = Variant::Ucb;
  int candidates = 128;
  double radius_mult = 2.0;
  ConfidenceSpec confidence = ConfidenceSpec::fixed(0.1);
  double ts_sigma = 0.1;
  /// Label gate threshold; nullopt runs the ungated rule (every step labeled).
  std::optional<double> kappa;
  bool episodic = false;
  bool normalize_z = false;
  double lambda = 1.0;
  double rho = 1.0;

  void validate() const;
  bool learns() const { return variant == Variant::Ucb || variant == Variant::Ts; }
};

/// Estimator in the parameterization the variant learns with: TS scales data by 1/ts_sigma.
Estimator make_estimator(const AgentConfig& cfg, int dim);

/// argmax over shooting candidates of psi(s, z)^T zhat + beta * ||psi(s, z)||_{V^-1}.
/// Candidates are `cfg.candidates` uniform draws from the radius_mult*beta
/// ellipsoid plus zhat itself (index 0); ties keep the first.
Vec select_ucb(const AgentConfig& cfg, const Estimator& est, SfOracle& oracle, int state, Rng& rng);

double ucb_score(const Estimator& est, const Vec& psi, double beta);

/// One draw from N(zhat, V^-1).
Vec select_ts(const AgentConfig& cfg, const Estimator& est, Rng& rng);

struct StepRecord {
  std::int64_t episode = 0;
  int t = 0;
  std::int64_t global_step = 0;
  int state = 0;
  int action = 0;
  Vec z;  // chosen latent as selected (before optional normalization)
  bool labeled = false;
  std::optional<double> reward;
  double d_gap = 0.0;
  double mahal_zr = 0.0;
  double beta = 0.0;
  double seconds = 0.0;  // selection + update wall time, filled when timing
};

struct EpisodeLog {
  std::int64_t episode = 0;
  int initial_state = 0;
  double g_hat = 0.0;              // noiseless discounted return of the agent
  double g_star = 0.0;             // coupled replay of the Oracle policy
  double g_star_expected = 0.0;    // psi(s0, z_r)^T z_r
  std::int64_t labels = 0;
  double zhat_err = 0.0;           // ||zhat - z_r|| at episode end
  std::vector<StepRecord> steps;
};

/// Mutable state of one learning (or baseline) agent within one run.
class Agent {
 public:
  Agent(AgentConfig cfg, int dim);
  Agent(AgentConfig cfg, Estimator est);

  const AgentConfig& config() const { return cfg_; }
  const Estimator& estimator() const { return est_; }
  Estimator& estimator() { return est_; }

  /// One interaction: select z (reusing the episode latent when episodic and
  /// t > 0), act, transition, gate and absorb the label.
  StepRecord step(SfOracle& oracle, const RewardTask& task, const EnvStream& env, std::int64_t episode,
                  int t, int state, Rng& rng, int& next_state, bool timing = false);

  /// H steps from s0 ~ mu0 plus the coupled Oracle replay.
  EpisodeLog run_episode(SfOracle& oracle, const RewardTask& task, const EnvStream& env, std::int64_t episode,
                         Rng& rng, bool timing = false);

 private:
  Vec choose(SfOracle& oracle, const RewardTask& task, int state, std::int64_t global_step, Rng& rng);

  AgentConfig cfg_;
  Estimator est_;
  Vec episode_z_;
};

/// Discounted noiseless return of pi_{z_r(t)} from s0 under the episode's
/// environment draws.
double oracle_replay(SfOracle& oracle, const RewardTask& task, const EnvStream& env, std::int64_t episode,
                     int initial_state);

struct Labeled {
  int state = 0;
  double reward = 0.0;
};

/// Applies update(phi(s), r) for each pair, in order.
void warm_start(Estimator& est, const std::vector<Labeled>& dataset, const FeatureWorld& world);

/// Solves (E_D[phi phi^T] + ridge I) z = E_D[phi r]. A negative ridge selects
/// the default 1e-10 * trace(E_D[phi phi^T]) / d guard.
Vec infer_offline(const std::vector<Labeled>& dataset, const FeatureWorld& world, double ridge = -1.0);

/// Uniform direction scaled to `radius`.
Vec uniform_sphere(int dim, double radius, Rng& rng);

}  // namespace optibfm
