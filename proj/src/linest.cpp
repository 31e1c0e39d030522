#include "optibfm/linest.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>

#include "optibfm/errors.hpp"

namespace optibfm {

namespace {

constexpr double kDiagonalFloor = 1e-12;

}  // namespace

ConfidenceSpec ConfidenceSpec::fixed(double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("fixed confidence radius must be finite and >= 0");
  }
  ConfidenceSpec spec;
  spec.mode_ = FixedRadius{beta};
  return spec;
}

ConfidenceSpec ConfidenceSpec::theoretical(double delta, double s_bound, double sigma) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("confidence delta must lie in (0, 1)");
  }
  if (!(s_bound > 0.0) || !(sigma > 0.0)) {
    throw std::invalid_argument("theoretical radius needs s_bound > 0 and sigma > 0");
  }
  ConfidenceSpec spec;
  spec.mode_ = TheoreticalRadius{delta, s_bound, sigma};
  return spec;
}

ConfidenceSpec ConfidenceSpec::scaled(double factor) const {
  ConfidenceSpec out = *this;
  out.scale_ *= factor;
  return out;
}

Estimator::Estimator(int dim, double lambda, double rho)
    : dim_(dim), lambda_(lambda), rho_(rho) {
  if (dim < 1) {
    throw std::invalid_argument("estimator dimension must be >= 1");
  }
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("ridge lambda must be positive");
  }
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("decay rho must lie in (0, 1]");
  }
  info_ = Vec::Zero(dim);
  gram_ = Mat::Zero(dim, dim);
  chol_ = Mat::Identity(dim, dim) * std::sqrt(lambda);
  zhat_ = Vec::Zero(dim);
}

void Estimator::update(const Vec& phi, double reward) {
  if (phi.size() != dim_) {
    throw std::invalid_argument("feature length " + std::to_string(phi.size()) +
                                " does not match estimator dimension " + std::to_string(dim_));
  }
  if (!phi.allFinite() || !std::isfinite(reward)) {
    throw std::invalid_argument("non-finite observation rejected");
  }

  if (rho_ == 1.0) {
    gram_.noalias() += phi * phi.transpose();
    info_.noalias() += phi * reward;
  } else {
    gram_ *= rho_;
    gram_.noalias() += phi * phi.transpose();
    info_ *= rho_;
    info_.noalias() += phi * reward;
  }
  ++count_;

  if (rho_ == 1.0 && path_ == FactorPath::Auto) {
    rank_one_update(phi);
  } else {
    refactorize();
  }
  solve_estimate();
}

// Givens-style update of the upper factor: R^T R + x x^T = R'^T R'.
void Estimator::rank_one_update(Vec x) {
  for (int k = 0; k < dim_; ++k) {
    const double rkk = chol_(k, k);
    const double xk = x(k);
    if (xk == 0.0) {
      continue;
    }
    const double r = std::sqrt(rkk * rkk + xk * xk);
    const double c = r / rkk;
    const double s = xk / rkk;
    chol_(k, k) = r;
    for (int j = k + 1; j < dim_; ++j) {
      chol_(k, j) = (chol_(k, j) + s * x(j)) / c;
      x(j) = c * x(j) - s * chol_(k, j);
    }
  }
  check_diagonal();
}

void Estimator::refactorize() {
  Mat v = gram_;
  v.diagonal().array() += lambda_;
  Eigen::LLT<Mat> llt(v);
  if (llt.info() != Eigen::Success) {
    throw InternalError("precision matrix lost positive definiteness");
  }
  chol_ = llt.matrixU();
  check_diagonal();
}

void Estimator::check_diagonal() const {
  for (int k = 0; k < dim_; ++k) {
    if (!(chol_(k, k) > kDiagonalFloor)) {
      throw InternalError("Cholesky diagonal entry " + std::to_string(k) + " fell below 1e-12");
    }
  }
}

void Estimator::solve_estimate() { zhat_ = solve_upper(solve_upper_trans(info_)); }

Vec Estimator::solve_upper(const Vec& rhs) const {
  Vec x = rhs;
  for (int i = dim_ - 1; i >= 0; --i) {
    double acc = x(i);
    for (int j = i + 1; j < dim_; ++j) {
      acc -= chol_(i, j) * x(j);
    }
    x(i) = acc / chol_(i, i);
  }
  return x;
}

Vec Estimator::solve_upper_trans(const Vec& rhs) const {
  Vec x = rhs;
  for (int i = 0; i < dim_; ++i) {
    double acc = x(i);
    for (int j = 0; j < i; ++j) {
      acc -= chol_(j, i) * x(j);
    }
    x(i) = acc / chol_(i, i);
  }
  return x;
}

Mat Estimator::precision() const {
  const auto upper = chol_.triangularView<Eigen::Upper>();
  return upper.transpose() * Mat(upper);
}

double Estimator::log_det() const {
  double acc = 0.0;
  for (int k = 0; k < dim_; ++k) {
    acc += std::log(chol_(k, k));
  }
  return 2.0 * acc;
}

double Estimator::beta(const ConfidenceSpec& spec) const {
  if (spec.is_fixed()) {
    return spec.scale() * spec.fixed_radius().beta;
  }
  const auto& th = spec.theoretical_radius();
  // log det V - d log lambda is >= 0 in exact arithmetic.
  const double log_ratio = std::max(0.0, log_det() - dim_ * std::log(lambda_));
  const double radius = std::sqrt(lambda_) * th.s_bound +
                        th.sigma * std::sqrt(log_ratio + 2.0 * std::log(1.0 / th.delta));
  return spec.scale() * radius;
}

double Estimator::mahalanobis(const Vec& z) const {
  const Vec diff = z - zhat_;
  return (chol_.triangularView<Eigen::Upper>() * diff).norm();
}

double Estimator::inverse_norm(const Vec& x) const { return solve_upper_trans(x).norm(); }

double Estimator::d_gap(const Vec& phi) const { return std::log1p(solve_upper_trans(phi).squaredNorm()); }

std::vector<Vec> Estimator::sample_ellipsoid(double radius, int count, Rng& rng) const {
  if (!(radius >= 0.0)) {
    throw std::invalid_argument("ellipsoid radius must be >= 0");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  Vec xi(dim_);
  for (int n = 0; n < count; ++n) {
    double norm = 0.0;
    do {
      for (int i = 0; i < dim_; ++i) {
        xi(i) = normal(rng);
      }
      norm = xi.norm();
    } while (norm == 0.0);
    const double r = std::pow(uniform(rng), 1.0 / dim_);
    xi *= radius * r / norm;
    out.push_back(zhat_ + solve_upper(xi));
  }
  return out;
}

Vec Estimator::sample_posterior(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec xi(dim_);
  for (int i = 0; i < dim_; ++i) {
    xi(i) = normal(rng);
  }
  return zhat_ + solve_upper(xi);
}

nlohmann::json Estimator::to_json() const {
  auto row_major = [](const Mat& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (int i = 0; i < m.rows(); ++i) {
      for (int j = 0; j < m.cols(); ++j) {
        flat.push_back(m(i, j));
      }
    }
    return flat;
  };
  return {
      {"dim", dim_},
      {"lambda", lambda_},
      {"rho", rho_},
      {"count", count_},
      {"info", std::vector<double>(info_.data(), info_.data() + info_.size())},
      {"chol", row_major(chol_)},
      {"gram", row_major(gram_)},
  };
}

Estimator Estimator::from_json(const nlohmann::json& j) {
  Estimator est(j.at("dim").get<int>(), j.at("lambda").get<double>(), j.at("rho").get<double>());
  const int d = est.dim_;
  const auto info = j.at("info").get<std::vector<double>>();
  const auto chol = j.at("chol").get<std::vector<double>>();
  const auto gram = j.at("gram").get<std::vector<double>>();
  if (info.size() != static_cast<std::size_t>(d) || chol.size() != static_cast<std::size_t>(d * d) ||
      gram.size() != static_cast<std::size_t>(d * d)) {
    throw std::invalid_argument("estimator snapshot has inconsistent array sizes");
  }
  est.count_ = j.at("count").get<std::int64_t>();
  for (int i = 0; i < d; ++i) {
    est.info_(i) = info[static_cast<std::size_t>(i)];
    for (int k = 0; k < d; ++k) {
      est.chol_(i, k) = chol[static_cast<std::size_t>(i * d + k)];
      est.gram_(i, k) = gram[static_cast<std::size_t>(i * d + k)];
    }
  }
  est.check_diagonal();
  est.solve_estimate();
  return est;
}

}  // namespace optibfm
