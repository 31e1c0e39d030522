#include "optibfm/propcheck.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <array>
#include <functional>
#include <limits>
#include <memory>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "optibfm/harness.hpp"

namespace optibfm {

namespace {

constexpr double kEigenTolerance = 1e-9;
constexpr double kUcbTolerance = 1e-10;

Rng instance_rng(std::uint64_t seed, std::uint64_t check, std::int64_t index) {
  return Rng(mix_keys(seed, check, static_cast<std::uint64_t>(index)));
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Half the draws sit exactly on the norm bound, half strictly inside.
Vec bounded_feature(int d, double bound, Rng& rng) {
  Vec dir = uniform_sphere(d, 1.0, rng);
  const double r = uniform(rng, 0.0, 1.0) < 0.5 ? bound : bound * uniform(rng, 0.0, 1.0);
  return dir * r;
}

double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> solver(m, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

double dense_log_det(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  const Mat& l = llt.matrixLLT();
  double acc = 0.0;
  for (int i = 0; i < m.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

double dense_inverse_quad(const Mat& m, const Vec& x) { return x.dot(Eigen::LLT<Mat>(m).solve(x)); }

/// Max violation across instances; instance i draws from its own stream so
/// serial and parallel execution agree.
double max_over_instances(int count, int jobs, const std::function<double(int)>& instance) {
  std::vector<double> results(static_cast<std::size_t>(count), -std::numeric_limits<double>::infinity());
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int i = 0; i < count; ++i) {
    try {
      results[static_cast<std::size_t>(i)] = instance(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return count == 0 ? 0.0 : *std::max_element(results.begin(), results.end());
}

CheckReport make_report(std::string name, std::int64_t instances, double worst, double tolerance,
                        std::string detail = {}) {
  CheckReport r;
  r.name = std::move(name);
  r.instances = instances;
  r.worst_violation = worst;
  r.tolerance = tolerance;
  r.pass = worst <= tolerance;
  r.detail = std::move(detail);
  return r;
}

int pick_dim(const CheckOptions& opts, int i) { return opts.dims[static_cast<std::size_t>(i) % opts.dims.size()]; }

int g_jobs = 0;

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
}

}  // namespace

double horizon_constant(double gamma, int horizon) {
  double acc = 0.0;
  double g2 = 1.0;
  for (int t = 0; t < horizon; ++t) {
    acc += g2;
    g2 *= gamma * gamma;
  }
  return acc;
}

double sf_bound_violation(double gamma, const std::vector<Vec>& features, bool negative_control) {
  check_gamma(gamma);
  if (features.empty()) return 0.0;
  const int d = static_cast<int>(features.front().size());
  Vec psi = Vec::Zero(d);
  Mat a = Mat::Zero(d, d);
  double disc = 1.0;
  for (const Vec& phi : features) {
    psi += disc * phi;
    a.noalias() += phi * phi.transpose();
    disc *= gamma;
  }
  const double c_h = negative_control ? 1.0 : horizon_constant(gamma, static_cast<int>(features.size()));
  const Mat gap = c_h * a - psi * psi.transpose();
  return -min_eigenvalue(gap);
}

double loewner_violation(double gamma, double lambda, const std::vector<std::vector<Vec>>& episodes, Rng& rng,
                         int probes, bool negative_control) {
  check_gamma(gamma);
  if (episodes.empty()) {
    // V = W = lambda I; c_H >= 1 leaves slack
    return 0.0;
  }
  const int d = static_cast<int>(episodes.front().front().size());
  const int horizon = static_cast<int>(episodes.front().size());
  const double c_h = horizon_constant(gamma, horizon);
  Mat v = lambda * Mat::Identity(d, d);
  Mat w = lambda * Mat::Identity(d, d);
  for (const auto& ep : episodes) {
    Vec psi = Vec::Zero(d);
    double disc = 1.0;
    for (const Vec& phi : ep) {
      v.noalias() += phi * phi.transpose();
      psi += disc * phi;
      disc *= gamma;
    }
    w.noalias() += psi * psi.transpose();
  }
  const double scale = negative_control ? 1.0 : 1.0 / c_h;
  double worst = -min_eigenvalue(v - scale * w);

  const Eigen::LLT<Mat> v_llt(v);
  const Eigen::LLT<Mat> w_llt(w);
  const double factor = negative_control ? 1.0 : std::sqrt(c_h);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int p = 0; p < probes; ++p) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = normal(rng);
    const double lhs = std::sqrt(x.dot(v_llt.solve(x)));
    const double rhs = factor * std::sqrt(x.dot(w_llt.solve(x)));
    worst = std::max(worst, (lhs - rhs) / std::max(1.0, rhs));
  }
  return worst;
}

PotentialTerms elliptical_potential(const std::vector<Vec>& features, const Mat& v0) {
  PotentialTerms out;
  Mat v = v0;
  for (const Vec& phi : features) {
    const double u = dense_inverse_quad(v, phi);
    out.lhs += std::min(1.0, u);
    out.sum_log += std::log1p(u);
    v.noalias() += phi * phi.transpose();
  }
  const double log_ratio = dense_log_det(v) - dense_log_det(v0);
  out.rhs = 2.0 * log_ratio;
  out.telescoping_error = std::abs(out.sum_log - log_ratio);
  return out;
}

DetBoundTerms det_bound(const std::vector<Vec>& features, double lambda, double feat_bound) {
  DetBoundTerms out;
  if (features.empty()) return out;
  const int d = static_cast<int>(features.front().size());
  Mat v = lambda * Mat::Identity(d, d);
  for (const Vec& phi : features) v.noalias() += phi * phi.transpose();
  const double n = static_cast<double>(features.size());
  out.lhs = dense_log_det(v) - d * std::log(lambda);
  out.rhs = d * std::log((d * lambda + n * feat_bound * feat_bound) / (d * lambda));
  return out;
}

UcbClosedFormTerms ucb_closed_form(const Estimator& est, const Vec& psi, double beta, Rng& rng, int samples,
                                   bool negative_control) {
  UcbClosedFormTerms out;
  const Mat v = est.precision();
  const Vec& zhat = est.zhat();
  const double inv_norm = std::sqrt(std::max(0.0, dense_inverse_quad(v, psi)));
  out.closed_form = zhat.dot(psi) + (negative_control ? 0.0 : beta * inv_norm);

  if (inv_norm > 0.0) {
    const Vec u = beta * Eigen::LLT<Mat>(v).solve(psi) / inv_norm;
    out.boundary_error = std::abs(std::sqrt(u.dot(v * u)) - beta);
    out.attain_error = std::abs((zhat + u).dot(psi) - out.closed_form);
  }
  out.max_excess = -std::numeric_limits<double>::infinity();
  for (const Vec& w : est.sample_ellipsoid(beta, samples, rng)) {
    out.max_excess = std::max(out.max_excess, w.dot(psi) - out.closed_form);
  }
  if (samples == 0) out.max_excess = 0.0;
  return out;
}

// ---------------------------------------------------------------------------

CheckReport check_empirical_sf_bound(const CheckOptions& opts) {
  const double worst = max_over_instances(opts.instances, g_jobs, [&](int i) {
    Rng rng = instance_rng(opts.seed, 1, i);
    const int d = pick_dim(opts, i);
    const double gamma = uniform(rng, 0.0, 0.999);
    const int horizon = uniform_int(rng, opts.negative_control ? 2 : 1, 50);
    const double bound = uniform(rng, 0.1, 3.0);
    std::vector<Vec> seq;
    for (int t = 0; t < horizon; ++t) seq.push_back(bounded_feature(d, bound, rng));
    // Repeating one feature makes the unperturbed bound tight, so the control must trip.
    if (opts.negative_control) std::fill(seq.begin(), seq.end(), seq.front());
    return sf_bound_violation(gamma, seq, opts.negative_control);
  });
  return make_report("empirical_sf_bound", opts.instances, worst, kEigenTolerance);
}

CheckReport check_loewner_vw(const CheckOptions& opts) {
  const double worst = max_over_instances(opts.instances, g_jobs, [&](int i) {
    Rng rng = instance_rng(opts.seed, 2, i);
    const int d = pick_dim(opts, i);
    const double gamma = uniform(rng, 0.0, 0.999);
    const double lambda = uniform(rng, 0.1, 5.0);
    const int horizon = uniform_int(rng, 1, 30);
    const int n_episodes = uniform_int(rng, opts.negative_control ? 1 : 0, 10);
    const double bound = uniform(rng, 0.1, 3.0);
    std::vector<std::vector<Vec>> episodes;
    for (int k = 0; k < n_episodes; ++k) {
      std::vector<Vec> ep;
      const Vec repeated = bounded_feature(d, bound, rng);
      for (int t = 0; t < horizon; ++t) {
        ep.push_back(opts.negative_control ? repeated : bounded_feature(d, bound, rng));
      }
      episodes.push_back(std::move(ep));
    }
    return loewner_violation(gamma, lambda, episodes, rng, 100, opts.negative_control);
  });
  return make_report("loewner_vw", opts.instances, worst, kEigenTolerance);
}

CheckReport check_elliptical_potential(const CheckOptions& opts) {
  const double worst = max_over_instances(opts.instances, g_jobs, [&](int i) {
    Rng rng = instance_rng(opts.seed, 3, i);
    const int d = pick_dim(opts, i);
    const double lambda = uniform(rng, 0.5, 5.0);
    const double bound = uniform(rng, 0.1, 3.0);
    std::vector<Vec> seq;
    for (int t = 0; t < 200; ++t) seq.push_back(bounded_feature(d, bound, rng));
    const PotentialTerms terms = elliptical_potential(seq, lambda * Mat::Identity(d, d));
    const double rhs = opts.negative_control ? 0.5 * terms.rhs : terms.rhs;
    // telescoping identity: own 1e-8 budget, relative to its magnitude
    const double tele = terms.telescoping_error / std::max(1.0, terms.sum_log);
    return std::max(terms.lhs - rhs, tele - 1e-8);
  });
  return make_report("elliptical_potential", opts.instances, worst, kEigenTolerance,
                     "bound lhs - 2 log det ratio; telescoping identity within 1e-8");
}

CheckReport check_det_bound(const CheckOptions& opts) {
  const double worst = max_over_instances(opts.instances, g_jobs, [&](int i) {
    Rng rng = instance_rng(opts.seed, 4, i);
    const int d = pick_dim(opts, i);
    const double lambda = uniform(rng, 0.1, 5.0);
    const double bound = uniform(rng, 0.1, 3.0);
    const int n = uniform_int(rng, opts.negative_control ? 1 : 0, 500);
    std::vector<Vec> seq;
    for (int t = 0; t < n; ++t) {
      seq.push_back(opts.negative_control ? Vec(uniform_sphere(d, bound, rng)) : bounded_feature(d, bound, rng));
    }
    const DetBoundTerms terms = det_bound(seq, lambda, bound);
    const double rhs = opts.negative_control ? 0.5 * terms.rhs : terms.rhs;
    return terms.lhs - rhs;
  });
  return make_report("det_bound", opts.instances, worst, kEigenTolerance);
}

CheckReport check_ucb_closed_form(const CheckOptions& opts) {
  const double worst = max_over_instances(opts.instances, g_jobs, [&](int i) {
    Rng rng = instance_rng(opts.seed, 5, i);
    const int d = pick_dim(opts, i);
    Estimator est(d, uniform(rng, 0.1, 5.0));
    const int n = uniform_int(rng, 0, 40);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int t = 0; t < n; ++t) {
      Vec phi(d);
      for (int k = 0; k < d; ++k) phi(k) = normal(rng);
      est.update(phi * uniform(rng, 0.1, 2.0), normal(rng));
    }
    Vec psi = Vec::Zero(d);
    if (opts.negative_control || uniform(rng, 0.0, 1.0) > 0.1) {
      for (int k = 0; k < d; ++k) psi(k) = normal(rng) * 3.0;
    }
    const double beta = uniform(rng, 0.01, 3.0);
    const UcbClosedFormTerms t = ucb_closed_form(est, psi, beta, rng, 100, opts.negative_control);
    const double s = std::max(1.0, std::abs(t.closed_form));
    return std::max({t.boundary_error / std::max(1.0, beta), t.attain_error / s, t.max_excess / s});
  });
  return make_report("ucb_closed_form", opts.instances, worst, kUcbTolerance);
}

// ---------------------------------------------------------------------------

CoverageSetup default_coverage_setup() {
  CoverageSetup s;
  s.world = WorldConfig{20, 4, 8, 0.95, 30, 3, 1.0, 0};
  s.agent.name = "ucb-episodic-theory";
  s.agent.variant = Variant::Ucb;
  s.agent.episodic = true;
  s.agent.candidates = 32;
  s.agent.confidence = ConfidenceSpec::theoretical(0.1, s.s_bound, s.noise_sigma);
  return s;
}

CoverageStats coverage_experiment(const CoverageSetup& setup) {
  if (setup.agent.confidence.is_fixed()) {
    throw std::invalid_argument("coverage needs a theoretical confidence radius");
  }
  const double delta = setup.agent.confidence.theoretical_radius().delta;
  AgentConfig agent = setup.agent;
  if (setup.negative_control) agent.confidence = agent.confidence.scaled(0.5);
  auto world = std::make_shared<const FeatureWorld>(make_random_world(setup.world));
  const int horizon = world->horizon();
  const int episodes = (setup.steps + horizon - 1) / horizon;

  std::vector<int> failed(static_cast<std::size_t>(setup.n_runs), 0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(setup.n_runs));
  const int threads = setup.jobs > 0 ? setup.jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int r = 0; r < setup.n_runs; ++r) {
    try {
      const std::uint64_t run_seed = mix_keys(setup.seed, 0x636f76, static_cast<std::uint64_t>(r));
      const RewardTask task(random_task_vector(world->dim(), setup.s_bound, run_seed), setup.noise_sigma,
                            setup.s_bound);
      SfOracle oracle(world);
      const EnvStream env = env_stream(run_seed);
      Rng rng = agent_stream(run_seed);
      Agent a(agent, world->dim());
      int steps = 0;
      bool violated = false;
      for (int k = 0; k < episodes && !violated; ++k) {
        int state = world->sample_initial(env.initial_uniform(k));
        for (int t = 0; t < horizon && steps < setup.steps; ++t, ++steps) {
          int next = state;
          const StepRecord rec = a.step(oracle, task, env, k, t, state, rng, next);
          if (rec.mahal_zr > rec.beta) {
            violated = true;
            break;
          }
          state = next;
        }
      }
      failed[static_cast<std::size_t>(r)] = violated ? 1 : 0;
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  CoverageStats stats;
  stats.runs = setup.n_runs;
  for (int f : failed) stats.failures += f;
  stats.fraction = static_cast<double>(stats.failures) / std::max(1, setup.n_runs);
  stats.threshold = delta + 2.0 * std::sqrt(delta * (1.0 - delta) / std::max(1, setup.n_runs)) + 0.02;
  return stats;
}

CheckReport check_coverage(const CoverageSetup& setup) {
  const CoverageStats stats = coverage_experiment(setup);
  char detail[160];
  std::snprintf(detail, sizeof detail, "failures %d/%d (fraction %.4f, allowed %.4f)", stats.failures, stats.runs,
                stats.fraction, stats.threshold);
  // violation is the excess failure fraction over the allowance
  return make_report("coverage", stats.runs, stats.fraction - stats.threshold, 0.0, detail);
}

RegretSetup default_regret_setup() {
  RegretSetup s;
  s.world = WorldConfig{20, 4, 8, 0.95, 30, 3, 1.0, 100};
  s.agent.name = "ucb-episodic";
  s.agent.variant = Variant::Ucb;
  s.agent.episodic = true;
  s.agent.confidence = ConfidenceSpec::theoretical(0.1, s.s_bound, s.noise_sigma);
  return s;
}

RegretStats regret_scaling_experiment(const RegretSetup& setup) {
  if (setup.short_episodes < 1 || setup.long_episodes <= setup.short_episodes) {
    throw std::invalid_argument("regret scaling needs 1 <= short_episodes < long_episodes");
  }
  AgentConfig agent = setup.agent;
  if (setup.negative_control) {
    agent.variant = Variant::Random;
  }
  AgentConfig random;
  random.name = "random";
  random.variant = Variant::Random;

  const int n = setup.seeds;
  std::vector<std::array<double, 4>> per_seed(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  const int threads = setup.jobs > 0 ? setup.jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    try {
      WorldConfig wc = setup.world;
      wc.seed = setup.world.seed + static_cast<std::uint64_t>(i);
      auto world = std::make_shared<const FeatureWorld>(make_random_world(wc));
      const std::uint64_t run_seed = mix_keys(setup.seed, 0x726567, static_cast<std::uint64_t>(i));
      const RewardTask task(random_task_vector(wc.dim, setup.s_bound, run_seed), setup.noise_sigma, setup.s_bound);
      const auto ours = run_single(world, task, agent, run_seed, setup.long_episodes).cumulative_regret();
      const auto base = run_single(world, task, random, run_seed, setup.long_episodes).cumulative_regret();
      const auto s = static_cast<std::size_t>(setup.short_episodes - 1);
      const auto l = static_cast<std::size_t>(setup.long_episodes - 1);
      per_seed[static_cast<std::size_t>(i)] = {ours[s], ours[l], base[s], base[l]};
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  RegretStats stats;
  for (const auto& row : per_seed) {
    stats.agent_short += row[0] / n;
    stats.agent_long += row[1] / n;
    stats.random_short += row[2] / n;
    stats.random_long += row[3] / n;
  }
  stats.agent_ratio = stats.agent_long / stats.agent_short;
  stats.random_ratio = stats.random_long / stats.random_short;
  return stats;
}

CheckReport check_regret_scaling(const RegretSetup& setup) {
  const RegretStats s = regret_scaling_experiment(setup);
  constexpr double kAgentMax = 2.6;
  constexpr double kRandomMin = 3.4;
  // A zero-regret agent (the Oracle) has no ratio; only the baseline side is judged.
  const bool agent_skipped = s.agent_short == 0.0 && s.agent_long == 0.0;
  // Positive when either side of the pair misses its threshold.
  const double violation =
      std::max(agent_skipped ? -kAgentMax : s.agent_ratio - kAgentMax, kRandomMin - s.random_ratio);
  char detail[200];
  if (agent_skipped) {
    std::snprintf(detail, sizeof detail, "R_%d/R_%d agent skipped (zero regret), random %.3f (>= %.1f)",
                  setup.long_episodes, setup.short_episodes, s.random_ratio, kRandomMin);
  } else {
    std::snprintf(detail, sizeof detail, "R_%d/R_%d agent %.3f (<= %.1f), random %.3f (>= %.1f)",
                  setup.long_episodes, setup.short_episodes, s.agent_ratio, kAgentMax, s.random_ratio, kRandomMin);
  }
  return make_report("regret_scaling", setup.seeds, std::isfinite(violation) ? violation : 1.0, 0.0, detail);
}

// ---------------------------------------------------------------------------

std::vector<std::string> check_names() {
  return {"empirical_sf_bound", "loewner_vw", "elliptical_potential", "det_bound",
          "ucb_closed_form",    "coverage",   "regret_scaling"};
}

std::vector<CheckReport> run_checks(const std::string& filter, const CheckOptions& opts, int jobs) {
  g_jobs = jobs;
  std::vector<CheckReport> out;
  auto wanted = [&](const std::string& name) { return filter.empty() || name.find(filter) != std::string::npos; };
  if (wanted("empirical_sf_bound")) out.push_back(check_empirical_sf_bound(opts));
  if (wanted("loewner_vw")) out.push_back(check_loewner_vw(opts));
  if (wanted("elliptical_potential")) out.push_back(check_elliptical_potential(opts));
  if (wanted("det_bound")) out.push_back(check_det_bound(opts));
  if (wanted("ucb_closed_form")) out.push_back(check_ucb_closed_form(opts));
  if (wanted("coverage")) {
    CoverageSetup setup = default_coverage_setup();
    setup.seed = opts.seed;
    setup.jobs = jobs;
    setup.negative_control = opts.negative_control;
    out.push_back(check_coverage(setup));
  }
  if (wanted("regret_scaling")) {
    RegretSetup setup = default_regret_setup();
    setup.seed = opts.seed;
    setup.jobs = jobs;
    setup.negative_control = opts.negative_control;
    out.push_back(check_regret_scaling(setup));
  }
  return out;
}

std::string format_report_line(const CheckReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-22s instances=%-6lld worst=%+.3e tol=%.1e %s%s%s", r.name.c_str(),
                static_cast<long long>(r.instances), r.worst_violation, r.tolerance, r.pass ? "PASS" : "FAIL",
                r.detail.empty() ? "" : "  ", r.detail.c_str());
  return buf;
}

}  // namespace optibfm
