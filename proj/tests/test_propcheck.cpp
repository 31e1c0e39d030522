#include <doctest.h>

#include <cmath>

#include "optibfm/propcheck.hpp"
#include "support.hpp"

using namespace optibfm;
using testing::gaussian_vec;

TEST_SUITE("propcheck") {
  TEST_CASE("horizon constant") {
    CHECK(horizon_constant(0.5, 1) == 1.0);
    CHECK(horizon_constant(0.5, 3) == doctest::Approx(1.0 + 0.25 + 0.0625));
    CHECK(horizon_constant(0.9, 200) == doctest::Approx((1 - std::pow(0.81, 200)) / (1 - 0.81)));
  }

  TEST_CASE("empirical SF bound: single feature is the equality case") {
    Rng rng(1);
    const Vec phi = gaussian_vec(5, rng);
    CHECK(std::abs(sf_bound_violation(0.7, {phi})) <= 1e-12);
    CHECK_THROWS_AS(sf_bound_violation(1.0, {phi, phi}), std::invalid_argument);
  }

  TEST_CASE("empirical SF bound holds on random sequences at d = 6") {
    CheckOptions opts;
    opts.dims = {6};
    const CheckReport r = check_empirical_sf_bound(opts);
    CHECK(r.instances == 1000);
    CHECK(r.pass);
    CHECK(r.worst_violation <= 1e-9);
  }

  TEST_CASE("Loewner comparison: degenerate cases") {
    Rng rng(2);
    CHECK(loewner_violation(0.9, 1.0, {}, rng) <= 0.0);
    // one episode of length one: V - W = 0
    const Vec phi = gaussian_vec(4, rng);
    const double v = loewner_violation(0.9, 2.0, {{phi}}, rng);
    CHECK(std::abs(v) <= 1e-12);
  }

  TEST_CASE("Loewner comparison on 500 random multi-episode instances") {
    CheckOptions opts;
    opts.instances = 500;
    const CheckReport r = check_loewner_vw(opts);
    CHECK(r.instances == 500);
    CHECK(r.pass);
  }

  TEST_CASE("elliptical potential: zero and single-feature cases") {
    const auto zero = elliptical_potential(std::vector<Vec>(10, Vec::Zero(3)), Mat::Identity(3, 3));
    CHECK(zero.lhs == 0.0);
    CHECK(zero.rhs == doctest::Approx(0.0));
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      const Vec phi = gaussian_vec(3, rng, 0.2 + i * 0.05);
      const auto t = elliptical_potential({phi}, Mat::Identity(3, 3));
      const double u = phi.squaredNorm();
      CHECK(t.lhs == doctest::Approx(std::min(1.0, u)));
      CHECK(t.rhs == doctest::Approx(2.0 * std::log1p(u)));
      CHECK(t.lhs <= t.rhs);
    }
  }

  TEST_CASE("elliptical potential on random length-200 sequences at d = 8") {
    CheckOptions opts;
    opts.dims = {8};
    const CheckReport r = check_elliptical_potential(opts);
    CHECK(r.pass);
    Rng rng(4);
    std::vector<Vec> seq;
    for (int t = 0; t < 200; ++t) seq.push_back(gaussian_vec(8, rng));
    const auto terms = elliptical_potential(seq, 0.5 * Mat::Identity(8, 8));
    CHECK(terms.telescoping_error <= 1e-8);
  }

  TEST_CASE("determinant bound: empty and aligned sequences") {
    const auto empty = det_bound({}, 1.0, 1.0);
    CHECK(empty.lhs == 0.0);
    CHECK(empty.rhs == 0.0);
    const int d = 4, n = 50;
    const double lambda = 0.5, L = 2.0;
    const std::vector<Vec> aligned(n, L * Vec::Unit(d, 1));
    const auto t = det_bound(aligned, lambda, L);
    CHECK(t.lhs == doctest::Approx(std::log(1.0 + n * L * L / lambda)).epsilon(1e-12));
    CHECK(t.lhs < t.rhs);
  }

  TEST_CASE("determinant bound on 1000 random instances") { CHECK(check_det_bound(CheckOptions{}).pass); }

  TEST_CASE("closed-form optimistic value") {
    Rng rng(5);
    auto f = testing::feed(6, 20, 1.0, rng);
    const auto zero = ucb_closed_form(f.est, Vec::Zero(6), 0.8, rng, 100);
    CHECK(zero.closed_form == 0.0);
    CHECK(zero.max_excess <= 0.0);

    Estimator iso(6, 1.0);
    const Vec psi = gaussian_vec(6, rng);
    const auto t = ucb_closed_form(iso, psi, 0.8, rng, 1000);
    CHECK(t.closed_form == doctest::Approx(0.8 * psi.norm()).epsilon(1e-14));
    CHECK(t.boundary_error <= 1e-10);
    CHECK(t.attain_error <= 1e-10);
    CHECK(t.max_excess <= 0.0);

    CheckOptions opts;
    opts.dims = {6};
    CHECK(check_ucb_closed_form(opts).pass);
  }

  TEST_CASE("negative controls make every inequality check fail") {
    CheckOptions opts;
    opts.instances = 200;
    opts.negative_control = true;
    CHECK_FALSE(check_empirical_sf_bound(opts).pass);
    CHECK_FALSE(check_loewner_vw(opts).pass);
    CHECK_FALSE(check_elliptical_potential(opts).pass);
    CHECK_FALSE(check_det_bound(opts).pass);
    CHECK_FALSE(check_ucb_closed_form(opts).pass);
  }

  TEST_CASE("reports are deterministic and independent of the worker count") {
    CheckOptions opts;
    opts.instances = 300;
    for (const std::string name : {"empirical_sf_bound", "loewner_vw", "elliptical_potential", "det_bound",
                                   "ucb_closed_form"}) {
      const auto a = run_checks(name, opts, 1);
      const auto b = run_checks(name, opts, 3);
      REQUIRE(a.size() == 1);
      REQUIRE(b.size() == 1);
      CHECK(a[0].worst_violation == b[0].worst_violation);
      CHECK(a[0].pass == (a[0].worst_violation <= a[0].tolerance));
    }
  }

  TEST_CASE("filter selects checks by name") {
    CheckOptions opts;
    opts.instances = 10;
    const auto r = run_checks("elliptical", opts, 1);
    REQUIRE(r.size() == 1);
    CHECK(r[0].name == "elliptical_potential");
    CHECK(run_checks("no-such-check", opts, 1).empty());
    CHECK(check_names().size() == 7);
  }

  TEST_CASE("noiseless coverage has no failures") {
    CoverageSetup setup = default_coverage_setup();
    setup.noise_sigma = 0.0;
    setup.agent.lambda = 1e-3;
    setup.agent.confidence = ConfidenceSpec::theoretical(0.1, 1.0, 1e-6);
    setup.n_runs = 20;
    setup.steps = 600;
    const CoverageStats stats = coverage_experiment(setup);
    CHECK(stats.failures == 0);
  }

  TEST_CASE("coverage on a reduced protocol and its negative control") {
    CoverageSetup setup = default_coverage_setup();
    setup.n_runs = 40;
    setup.steps = 600;
    const CoverageStats ok = coverage_experiment(setup);
    CHECK(ok.fraction <= ok.threshold);
    setup.negative_control = true;
    const CoverageStats bad = coverage_experiment(setup);
    CHECK(bad.fraction > 0.1);
    CHECK_FALSE(check_coverage(setup).pass);

    setup.agent.confidence = ConfidenceSpec::fixed(1.0);
    CHECK_THROWS_AS(coverage_experiment(setup), std::invalid_argument);
  }

  TEST_CASE("regret scaling: oracle agent is skipped, random ratio is linear") {
    RegretSetup setup = default_regret_setup();
    setup.agent.variant = Variant::Oracle;
    setup.short_episodes = 20;
    setup.long_episodes = 80;
    setup.seeds = 6;
    const RegretStats s = regret_scaling_experiment(setup);
    CHECK(s.agent_short == 0.0);
    CHECK(s.agent_long == 0.0);
    CHECK(s.random_ratio > 3.0);
    const CheckReport r = check_regret_scaling(setup);
    CHECK(r.detail.find("skipped") != std::string::npos);

    setup.long_episodes = 10;
    CHECK_THROWS_AS(regret_scaling_experiment(setup), std::invalid_argument);
  }

  TEST_CASE("report line format") {
    CheckReport r;
    r.name = "det_bound";
    r.instances = 1000;
    r.worst_violation = -1.5;
    r.tolerance = 1e-9;
    r.pass = true;
    const std::string line = format_report_line(r);
    CHECK(line.find("det_bound") == 0);
    CHECK(line.find("instances=1000") != std::string::npos);
    CHECK(line.find("PASS") != std::string::npos);
  }
}
