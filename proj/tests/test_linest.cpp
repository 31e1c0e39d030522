#include <doctest.h>

#include <cmath>
#include <limits>

#include "optibfm/linest.hpp"
#include "support.hpp"

using namespace optibfm;
using testing::dense_logdet;
using testing::feed;
using testing::gaussian_vec;
using testing::rel_err;

TEST_SUITE("linest") {
  TEST_CASE("fresh estimator is the ridge prior") {
    Estimator e2(2, 1.0);
    CHECK(e2.chol().isApprox(Mat::Identity(2, 2)));
    CHECK(e2.zhat().isZero());
    CHECK(e2.info().isZero());
    CHECK(e2.count() == 0);

    Estimator e3(3, 4.0);
    CHECK((e3.chol() - 2.0 * Mat::Identity(3, 3)).norm() == 0.0);

    Estimator e50(50, 1.0);
    CHECK(e50.dim() == 50);
    CHECK(e50.chol().isApprox(Mat::Identity(50, 50)));
  }

  TEST_CASE("construction rejects bad parameters") {
    CHECK_THROWS_AS(Estimator(0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(Estimator(2, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(Estimator(2, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(Estimator(2, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(Estimator(2, 1.0, 1.5), std::invalid_argument);
  }

  TEST_CASE("single update on a basis vector") {
    Estimator e(3, 1.0);
    e.update(Vec::Unit(3, 0), 1.0);
    CHECK(e.zhat()(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(e.zhat()(1) == 0.0);
    CHECK(e.zhat()(2) == 0.0);
    CHECK(e.count() == 1);
  }

  TEST_CASE("zero feature leaves the estimate unchanged") {
    Rng rng(1);
    auto f = feed(3, 5, 1.0, rng);
    const Vec before = f.est.zhat();
    f.est.update(Vec::Zero(3), 5.0);
    CHECK((f.est.zhat() - before).norm() == 0.0);
  }

  TEST_CASE("non-finite or mis-sized observations are rejected") {
    Estimator e(2, 1.0);
    Vec bad(2);
    bad << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(e.update(bad, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(e.update(Vec::Ones(2), std::numeric_limits<double>::infinity()), std::invalid_argument);
    CHECK_THROWS_AS(e.update(Vec::Ones(3), 1.0), std::invalid_argument);
    CHECK(e.count() == 0);
  }

  TEST_CASE("50 random updates match a dense solve") {
    Rng rng(2);
    auto f = feed(4, 50, 1.0, rng);
    const Vec dense = f.v.ldlt().solve(f.b);
    CHECK(rel_err(f.est.zhat(), dense) <= 1e-8);
  }

  TEST_CASE("Cholesky and estimate consistency over many updates") {
    Rng rng(3);
    for (int d : {1, 2, 6, 16}) {
      auto f = feed(d, 300, 0.5, rng, 2.0);
      const Mat& r = f.est.chol();
      CHECK(r.isUpperTriangular());
      CHECK(r.diagonal().minCoeff() > 0.0);
      CHECK(rel_err(r.transpose() * r, f.v) <= 1e-8);
      CHECK(rel_err(f.est.precision(), f.v) <= 1e-8);
      CHECK(rel_err(f.est.info(), f.b) <= 1e-12);
      CHECK(rel_err(f.v * f.est.zhat(), f.est.info()) <= 1e-8);
    }
  }

  TEST_CASE("rank-one path matches refactorization at rho = 1") {
    Rng rng(4);
    Estimator fast(8, 1.0);
    Estimator slow(8, 1.0);
    slow.set_factor_path(Estimator::FactorPath::Refactor);
    for (int i = 0; i < 200; ++i) {
      const Vec phi = gaussian_vec(8, rng);
      const double r = gaussian_vec(1, rng)(0);
      fast.update(phi, r);
      slow.update(phi, r);
    }
    CHECK(rel_err(fast.precision(), slow.precision()) <= 1e-12);
    CHECK(rel_err(fast.info(), slow.info()) == 0.0);
    CHECK(rel_err(fast.zhat(), slow.zhat()) <= 1e-12);
  }

  TEST_CASE("decayed path keeps the ridge fixed") {
    Rng rng(5);
    const double rho = 0.9, lambda = 2.0;
    Estimator e(5, lambda, rho);
    Mat a = Mat::Zero(5, 5);
    Vec b = Vec::Zero(5);
    for (int i = 0; i < 60; ++i) {
      const Vec phi = gaussian_vec(5, rng);
      const double r = gaussian_vec(1, rng)(0);
      e.update(phi, r);
      a = rho * a + phi * phi.transpose();
      b = rho * b + phi * r;
    }
    const Mat v = lambda * Mat::Identity(5, 5) + a;
    CHECK(rel_err(e.gram(), a) <= 1e-12);
    CHECK(rel_err(e.precision(), v) <= 1e-10);
    CHECK(rel_err(e.zhat(), v.ldlt().solve(b)) <= 1e-10);
  }

  TEST_CASE("beta in fixed and theoretical modes") {
    Estimator e(4, 1.0);
    CHECK(e.beta(ConfidenceSpec::fixed(0.1)) == 0.1);
    const auto theory = ConfidenceSpec::theoretical(std::exp(-2.0), 1.0, 1.0);
    CHECK(e.beta(theory) == doctest::Approx(3.0).epsilon(1e-14));

    Rng rng(6);
    Estimator e5(5, 1.0);
    Mat v = Mat::Identity(5, 5);
    const auto spec = ConfidenceSpec::theoretical(0.1, 1.0, 0.1);
    double prev = e5.beta(spec);
    for (int i = 0; i < 100; ++i) {
      const Vec phi = gaussian_vec(5, rng).normalized();
      e5.update(phi, 0.3);
      v += phi * phi.transpose();
      const double b = e5.beta(spec);
      CHECK(b >= prev);
      prev = b;
    }
    const double dense = 1.0 + 0.1 * std::sqrt(dense_logdet(v) + 2.0 * std::log(10.0));
    CHECK(std::abs(e5.beta(spec) - dense) <= 1e-10);
    CHECK(e5.beta(spec.scaled(0.5)) == doctest::Approx(0.5 * dense).epsilon(1e-12));
  }

  TEST_CASE("confidence spec validation") {
    CHECK_THROWS_AS(ConfidenceSpec::fixed(-1.0), std::invalid_argument);
    CHECK_THROWS_AS(ConfidenceSpec::theoretical(0.0, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ConfidenceSpec::theoretical(1.0, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ConfidenceSpec::theoretical(0.1, 0.0, 1.0), std::invalid_argument);
  }

  TEST_CASE("mahalanobis distance") {
    Rng rng(7);
    Estimator iso(3, 4.0);
    CHECK(iso.mahalanobis(iso.zhat()) == 0.0);
    CHECK(iso.mahalanobis(Vec::Unit(3, 1)) == doctest::Approx(2.0).epsilon(1e-15));

    auto f = feed(6, 30, 1.0, rng);
    CHECK(f.est.mahalanobis(f.est.zhat()) == 0.0);
    for (int i = 0; i < 20; ++i) {
      const Vec z = gaussian_vec(6, rng);
      const Vec u = z - f.est.zhat();
      CHECK(std::abs(f.est.mahalanobis(z) - std::sqrt(u.dot(f.v * u))) <= 1e-10 * std::max(1.0, u.norm()));
    }
  }

  TEST_CASE("ellipsoid samples: degenerate and isotropic radii") {
    Rng rng(8);
    auto f = feed(4, 10, 1.0, rng);
    for (const Vec& z : f.est.sample_ellipsoid(0.0, 20, rng)) CHECK((z - f.est.zhat()).norm() == 0.0);

    Estimator iso(4, 9.0);
    iso.update(Vec::Zero(4), 0.0);
    for (const Vec& z : iso.sample_ellipsoid(1.5, 2000, rng)) CHECK(z.norm() <= 1.5 / 3.0 + 1e-12);
    CHECK_THROWS_AS(iso.sample_ellipsoid(-1.0, 1, rng), std::invalid_argument);
  }

  TEST_CASE("ellipsoid samples are uniform in volume") {
    Rng rng(9);
    auto f = feed(3, 8, 0.7, rng);
    const auto samples = f.est.sample_ellipsoid(2.0, 100000, rng);
    CHECK(samples.size() == 100000);
    double max_m = 0.0;
    int inner = 0;
    for (const Vec& z : samples) {
      const Vec u = z - f.est.zhat();
      const double m = std::sqrt(u.dot(f.v * u));
      max_m = std::max(max_m, m);
      inner += m <= 1.0 ? 1 : 0;
    }
    CHECK(max_m <= 2.0 + 1e-9);
    CHECK(std::abs(inner / 1e5 - 0.125) <= 0.01);
  }

  TEST_CASE("posterior draws under identity precision") {
    Rng rng(10);
    Estimator e(3, 1.0);
    Vec sum = Vec::Zero(3), sq = Vec::Zero(3);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const Vec z = e.sample_posterior(rng);
      sum += z;
      sq += z.cwiseProduct(z);
    }
    for (int k = 0; k < 3; ++k) {
      const double var = sq(k) / n - std::pow(sum(k) / n, 2);
      CHECK(std::abs(var - 1.0) <= 0.03);
    }
  }

  TEST_CASE("posterior covariance matches the dense inverse") {
    Rng rng(11);
    auto f = feed(6, 12, 1.0, rng);
    const int n = 100000;
    Mat acc = Mat::Zero(6, 6);
    Vec mean = Vec::Zero(6);
    std::vector<Vec> draws;
    draws.reserve(n);
    for (int i = 0; i < n; ++i) {
      draws.push_back(f.est.sample_posterior(rng));
      mean += draws.back();
    }
    mean /= n;
    for (const Vec& z : draws) acc += (z - mean) * (z - mean).transpose();
    acc /= (n - 1);
    CHECK(rel_err(acc, f.v.inverse()) <= 0.05);
  }

  TEST_CASE("posterior draws replay under a fixed seed") {
    Rng setup(12);
    auto f = feed(5, 10, 1.0, setup);
    Rng a(99), b(99);
    for (int i = 0; i < 10; ++i) CHECK((f.est.sample_posterior(a) - f.est.sample_posterior(b)).norm() == 0.0);
  }

  TEST_CASE("d-gap values") {
    Rng rng(13);
    Estimator e(4, 1.0);
    CHECK(e.d_gap(Vec::Zero(4)) == 0.0);
    CHECK(e.d_gap(Vec::Unit(4, 2)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    auto f = feed(5, 20, 1.5, rng);
    for (int i = 0; i < 20; ++i) {
      const Vec phi = gaussian_vec(5, rng);
      const double direct = dense_logdet(f.v + phi * phi.transpose()) - dense_logdet(f.v);
      CHECK(std::abs(f.est.d_gap(phi) - direct) <= 1e-9);
      CHECK(std::abs(f.est.inverse_norm(phi) - std::sqrt(phi.dot(f.v.ldlt().solve(phi)))) <= 1e-10);
    }
  }

  TEST_CASE("d-gap shrinks after absorbing the same feature") {
    Rng rng(14);
    auto f = feed(4, 5, 1.0, rng);
    const Vec phi = gaussian_vec(4, rng);
    double prev = f.est.d_gap(phi);
    for (int i = 0; i < 10; ++i) {
      f.est.update(phi, 0.1);
      const double now = f.est.d_gap(phi);
      CHECK(now < prev);
      prev = now;
    }
  }

  TEST_CASE("log determinant from the factor") {
    Rng rng(15);
    auto f = feed(7, 40, 0.3, rng);
    CHECK(std::abs(f.est.log_det() - dense_logdet(f.v)) <= 1e-10);
  }

  TEST_CASE("json round trip preserves state exactly") {
    Rng rng(16);
    auto f = feed(5, 25, 1.0, rng);
    const auto j = f.est.to_json();
    CHECK(j.at("chol").size() == 25);
    const Estimator back = Estimator::from_json(j);
    CHECK(back.count() == f.est.count());
    CHECK((back.chol() - f.est.chol()).norm() == 0.0);
    CHECK((back.zhat() - f.est.zhat()).norm() == 0.0);
    CHECK((back.info() - f.est.info()).norm() == 0.0);
    CHECK(back.to_json() == j);
  }
}
