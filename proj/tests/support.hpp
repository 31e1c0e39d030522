#pragma once

#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "optibfm/linest.hpp"
#include "optibfm/rng.hpp"

namespace testing {

using optibfm::Mat;
using optibfm::Rng;
using optibfm::Vec;

inline Vec gaussian_vec(int d, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

inline double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

inline double dense_logdet(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Estimator fed with `n` random observations, plus the dense V and b it should hold.
struct Fed {
  optibfm::Estimator est;
  Mat v;
  Vec b;
};

inline Fed feed(int d, int n, double lambda, Rng& rng, double feat_scale = 1.0) {
  Fed f{optibfm::Estimator(d, lambda), lambda * Mat::Identity(d, d), Vec::Zero(d)};
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const Vec phi = gaussian_vec(d, rng, feat_scale);
    const double r = noise(rng);
    f.est.update(phi, r);
    f.v += phi * phi.transpose();
    f.b += phi * r;
  }
  return f;
}

}  // namespace testing
