#pragma once

// Randomized verification of the inequalities behind the regret analysis:
// return-level vs reward-level information, the elliptical potential lemma,
// the log-determinant bound, the closed-form optimistic value, confidence-set
// coverage and sublinear regret growth. Each check has a negative control that
// perturbs the inequality so the suite is able to fail.

#include <cstdint>
#include <string>
#include <vector>

#include "optibfm/agent.hpp"
#include "optibfm/linest.hpp"
#include "optibfm/sfworld.hpp"

namespace optibfm {

struct CheckReport {
  std::string name;
  std::int64_t instances = 0;
  double worst_violation = 0.0;  // > tolerance means failure
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

struct CheckOptions {
  std::uint64_t seed = 2024;
  int instances = 1000;
  std::vector<int> dims = {2, 6, 16};
  bool negative_control = false;
};

/// sum_{t<H} gamma^{2t}
double horizon_constant(double gamma, int horizon);

// Instance-level kernels. Each returns a signed violation: positive means the
// inequality is broken by that amount.

/// -lambda_min(c_H * A - psi psi^T) for one episode of features.
double sf_bound_violation(double gamma, const std::vector<Vec>& features, bool negative_control = false);

/// V_n >= W_n / c_H in Loewner order, and ||x||_{V^-1} <= sqrt(c_H) ||x||_{W^-1} on `probes` random x.
double loewner_violation(double gamma, double lambda, const std::vector<std::vector<Vec>>& episodes, Rng& rng,
                         int probes = 100, bool negative_control = false);

struct PotentialTerms {
  double lhs = 0.0;                // sum min{1, ||phi_t||^2_{V_{t-1}^-1}}
  double rhs = 0.0;                // 2 log(det V_n / det V_0)
  double sum_log = 0.0;            // sum log(1 + ||phi_t||^2_{V_{t-1}^-1})
  double telescoping_error = 0.0;  // |sum_log - log det ratio|
};
PotentialTerms elliptical_potential(const std::vector<Vec>& features, const Mat& v0);

struct DetBoundTerms {
  double lhs = 0.0;  // log(det V_n / lambda^d)
  double rhs = 0.0;  // d log((d lambda + n L^2) / (d lambda))
};
DetBoundTerms det_bound(const std::vector<Vec>& features, double lambda, double feat_bound);

struct UcbClosedFormTerms {
  double closed_form = 0.0;     // zhat^T psi + beta ||psi||_{V^-1}
  double boundary_error = 0.0;  // | ||u*||_V - beta |
  double attain_error = 0.0;    // | (zhat + u*)^T psi - closed_form |
  double max_excess = 0.0;      // max over sampled w of w^T psi - closed_form
};
UcbClosedFormTerms ucb_closed_form(const Estimator& est, const Vec& psi, double beta, Rng& rng, int samples,
                                   bool negative_control = false);

// Suite-level checks over randomized instances.
CheckReport check_empirical_sf_bound(const CheckOptions& opts);
CheckReport check_loewner_vw(const CheckOptions& opts);
CheckReport check_elliptical_potential(const CheckOptions& opts);
CheckReport check_det_bound(const CheckOptions& opts);
CheckReport check_ucb_closed_form(const CheckOptions& opts);

struct CoverageSetup {
  WorldConfig world;
  double noise_sigma = 0.1;
  double s_bound = 1.0;
  AgentConfig agent;  // its confidence must be theoretical; (delta, S, sigma) taken from it
  int n_runs = 400;
  int steps = 5000;
  std::uint64_t seed = 7;
  int jobs = 0;
  bool negative_control = false;  // halve beta
};

CoverageSetup default_coverage_setup();

struct CoverageStats {
  int runs = 0;
  int failures = 0;
  double fraction = 0.0;
  double threshold = 0.0;  // delta + 2 sqrt(delta(1-delta)/n) + 0.02
};

/// Fraction of independent runs in which z_r leaves the confidence set at any step.
CoverageStats coverage_experiment(const CoverageSetup& setup);
CheckReport check_coverage(const CoverageSetup& setup);

struct RegretSetup {
  WorldConfig world;  // world.seed is offset per seed
  double noise_sigma = 0.1;
  double s_bound = 1.0;
  AgentConfig agent;
  int short_episodes = 50;
  int long_episodes = 200;
  int seeds = 20;
  std::uint64_t seed = 11;
  int jobs = 0;
  bool negative_control = false;  // run the Random baseline in the agent's place
};

RegretSetup default_regret_setup();

struct RegretStats {
  double agent_short = 0.0, agent_long = 0.0, agent_ratio = 0.0;
  double random_short = 0.0, random_long = 0.0, random_ratio = 0.0;
};

RegretStats regret_scaling_experiment(const RegretSetup& setup);
CheckReport check_regret_scaling(const RegretSetup& setup);

/// All checks whose name contains `filter` (all when empty), in a fixed order.
std::vector<CheckReport> run_checks(const std::string& filter, const CheckOptions& opts, int jobs = 0);
std::vector<std::string> check_names();

std::string format_report_line(const CheckReport& report);

}  // namespace optibfm
