#include "optibfm/agent.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "optibfm/errors.hpp"

namespace optibfm {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Ucb:
      return "ucb";
    case Variant::Ts:
      return "ts";
    case Variant::Random:
      return "random";
    case Variant::Oracle:
      return "oracle";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "ucb") return Variant::Ucb;
  if (name == "ts") return Variant::Ts;
  if (name == "random") return Variant::Random;
  if (name == "oracle") return Variant::Oracle;
  throw std::invalid_argument("unknown agent variant '" + name + "' (expected ucb, ts, random or oracle)");
}

void AgentConfig::validate() const {
  if (candidates < 1) {
    throw std::invalid_argument("candidates must be >= 1");
  }
  if (!(radius_mult > 0.0)) {
    throw std::invalid_argument("radius_mult must be positive");
  }
  if (!(ts_sigma > 0.0)) {
    throw std::invalid_argument("ts_sigma must be positive");
  }
  if (kappa && !(*kappa >= 0.0)) {
    throw std::invalid_argument("kappa must be >= 0");
  }
  if (!(lambda > 0.0)) {
    throw std::invalid_argument("lambda must be positive");
  }
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("rho must lie in (0, 1]");
  }
}

Estimator make_estimator(const AgentConfig& cfg, int dim) { return Estimator(dim, cfg.lambda, cfg.rho); }

double ucb_score(const Estimator& est, const Vec& psi, double beta) {
  return psi.dot(est.zhat()) + beta * est.inverse_norm(psi);
}

namespace {

Vec normalized(const Vec& z) {
  const double n = z.norm();
  return n > 0.0 ? Vec(z / n) : z;
}

}  // namespace

Vec select_ucb(const AgentConfig& cfg, const Estimator& est, SfOracle& oracle, int state, Rng& rng) {
  const double beta = est.beta(cfg.confidence);
  std::vector<Vec> candidates = est.sample_ellipsoid(cfg.radius_mult * beta, cfg.candidates, rng);
  candidates.insert(candidates.begin(), est.zhat());

  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Vec& z = candidates[i];
    const OracleAnswer ans = oracle.query(state, cfg.normalize_z ? normalized(z) : z);
    const double score = ucb_score(est, ans.psi, beta);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return candidates[best];
}

Vec select_ts(const AgentConfig&, const Estimator& est, Rng& rng) { return est.sample_posterior(rng); }

Vec uniform_sphere(int dim, double radius, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec z(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) {
      z(i) = normal(rng);
    }
    norm = z.norm();
  } while (norm == 0.0);
  return z * (radius / norm);
}

Agent::Agent(AgentConfig cfg, int dim) : Agent(cfg, make_estimator(cfg, dim)) {}

Agent::Agent(AgentConfig cfg, Estimator est) : cfg_(std::move(cfg)), est_(std::move(est)) { cfg_.validate(); }

Vec Agent::choose(SfOracle& oracle, const RewardTask& task, int state, std::int64_t global_step, Rng& rng) {
  switch (cfg_.variant) {
    case Variant::Ucb:
      return select_ucb(cfg_, est_, oracle, state, rng);
    case Variant::Ts:
      return select_ts(cfg_, est_, rng);
    case Variant::Random:
      return uniform_sphere(est_.dim(), task.s_bound(), rng);
    case Variant::Oracle:
      return task.drift_value(global_step);
  }
  throw std::logic_error("unhandled agent variant");
}

StepRecord Agent::step(SfOracle& oracle, const RewardTask& task, const EnvStream& env, std::int64_t episode,
                       int t, int state, Rng& rng, int& next_state, bool timing) {
  const FeatureWorld& world = oracle.world();
  const auto start = timing ? std::chrono::steady_clock::now() : std::chrono::steady_clock::time_point{};

  StepRecord rec;
  rec.episode = episode;
  rec.t = t;
  rec.global_step = episode * world.horizon() + t;
  rec.state = state;
  const Vec z_r = task.drift_value(rec.global_step);
  rec.beta = est_.beta(cfg_.confidence);
  rec.mahal_zr = est_.mahalanobis(z_r);

  const bool reuse = cfg_.episodic && t > 0 && episode_z_.size() == est_.dim() &&
                     cfg_.variant != Variant::Oracle;
  if (!reuse) {
    episode_z_ = choose(oracle, task, state, rec.global_step, rng);
  }
  rec.z = episode_z_;
  rec.action = oracle.query(state, cfg_.normalize_z ? normalized(rec.z) : rec.z).action;
  next_state = world.sample_next(state, rec.action, env.transition_uniform(episode, t));

  const double scale = cfg_.variant == Variant::Ts ? 1.0 / cfg_.ts_sigma : 1.0;
  const Vec phi = world.feature(state) * scale;
  rec.d_gap = est_.d_gap(phi);
  if (cfg_.learns() && (!cfg_.kappa || rec.d_gap >= *cfg_.kappa)) {
    const double r = reward_sample(task, world, state, rec.global_step, env.noise_normal(episode, t));
    est_.update(phi, r * scale);
    rec.labeled = true;
    rec.reward = r;
  }
  if (timing) {
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return rec;
}

EpisodeLog Agent::run_episode(SfOracle& oracle, const RewardTask& task, const EnvStream& env,
                              std::int64_t episode, Rng& rng, bool timing) {
  const FeatureWorld& world = oracle.world();
  EpisodeLog log;
  log.episode = episode;
  log.initial_state = world.sample_initial(env.initial_uniform(episode));
  log.steps.reserve(static_cast<std::size_t>(world.horizon()));

  int state = log.initial_state;
  double discount = 1.0;
  for (int t = 0; t < world.horizon(); ++t) {
    int next = state;
    StepRecord rec = step(oracle, task, env, episode, t, state, rng, next, timing);
    log.g_hat += discount * noiseless_reward(task, world, state, rec.global_step);
    log.labels += rec.labeled ? 1 : 0;
    log.steps.push_back(std::move(rec));
    discount *= world.gamma();
    state = next;
  }

  log.g_star = oracle_replay(oracle, task, env, episode, log.initial_state);
  const Vec z0 = task.drift_value(episode * world.horizon());
  log.g_star_expected = oracle.query(log.initial_state, z0).psi.dot(z0);
  const Vec z_end = task.drift_value(episode * world.horizon() + world.horizon() - 1);
  log.zhat_err = (est_.zhat() - z_end).norm();
  return log;
}

double oracle_replay(SfOracle& oracle, const RewardTask& task, const EnvStream& env, std::int64_t episode,
                     int initial_state) {
  const FeatureWorld& world = oracle.world();
  int state = initial_state;
  double discount = 1.0;
  double total = 0.0;
  for (int t = 0; t < world.horizon(); ++t) {
    const std::int64_t gs = episode * world.horizon() + t;
    const int action = oracle.query(state, task.drift_value(gs)).action;
    const int next = world.sample_next(state, action, env.transition_uniform(episode, t));
    total += discount * noiseless_reward(task, world, state, gs);
    discount *= world.gamma();
    state = next;
  }
  return total;
}

void warm_start(Estimator& est, const std::vector<Labeled>& dataset, const FeatureWorld& world) {
  for (const auto& item : dataset) {
    if (item.state < 0 || item.state >= world.n_states()) {
      throw std::out_of_range("warm-start dataset references an invalid state");
    }
    est.update(world.feature(item.state), item.reward);
  }
}

Vec infer_offline(const std::vector<Labeled>& dataset, const FeatureWorld& world, double ridge) {
  if (dataset.empty()) {
    throw std::invalid_argument("offline inference needs a nonempty dataset");
  }
  const int d = world.dim();
  Mat moment = Mat::Zero(d, d);
  Vec target = Vec::Zero(d);
  for (const auto& item : dataset) {
    if (item.state < 0 || item.state >= world.n_states()) {
      throw std::out_of_range("dataset references an invalid state");
    }
    const Vec phi = world.feature(item.state);
    moment.noalias() += phi * phi.transpose();
    target.noalias() += phi * item.reward;
  }
  const double n = static_cast<double>(dataset.size());
  moment /= n;
  target /= n;

  if (ridge < 0.0) {
    ridge = 1e-10 * std::max(moment.trace() / d, std::numeric_limits<double>::min());
  }
  if (ridge == 0.0) {
    Eigen::FullPivLU<Mat> lu(moment);
    if (!lu.isInvertible()) {
      throw SingularError("second-moment matrix is singular (rank " + std::to_string(lu.rank()) + " < " +
                          std::to_string(d) + "); pass a positive ridge");
    }
    return lu.solve(target);
  }
  moment.diagonal().array() += ridge;
  Eigen::LLT<Mat> llt(moment);
  if (llt.info() != Eigen::Success) {
    throw SingularError("regularized second-moment matrix is not positive definite");
  }
  return llt.solve(target);
}

}  // namespace optibfm
