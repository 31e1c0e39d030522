#pragma once

// Online ridge regression on (feature, reward) pairs with the confidence
// ellipsoid {z : ||z - zhat||_V <= beta} it induces.
//
// State is kept as an information vector b = sum w_i phi_i r_i and an upper
// Cholesky factor R of the precision V = lambda*I + sum w_i phi_i phi_i^T, so
// every query (estimate, Mahalanobis norm, V^-1 norm, ellipsoid push-forward,
// posterior draw) reduces to triangular solves against R.
//
// With rho = 1 the factor is maintained by O(d^2) rank-1 updates. With rho < 1
// the data Gram is decayed, rho*A + phi*phi^T, while the ridge term stays
// fixed, and V is refactorized on every update.

#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "optibfm/rng.hpp"

namespace optibfm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct FixedRadius {
  double beta = 0.1;
};

/// Self-normalized radius: sqrt(lambda)*S + sigma*sqrt(log(det V / lambda^d) + 2 log(1/delta)).
struct TheoreticalRadius {
  double delta = 0.1;
  double s_bound = 1.0;
  double sigma = 0.1;
};

class ConfidenceSpec {
 public:
  ConfidenceSpec() = default;
  static ConfidenceSpec fixed(double beta);
  static ConfidenceSpec theoretical(double delta, double s_bound, double sigma);

  bool is_fixed() const { return std::holds_alternative<FixedRadius>(mode_); }
  const FixedRadius& fixed_radius() const { return std::get<FixedRadius>(mode_); }
  const TheoreticalRadius& theoretical_radius() const { return std::get<TheoreticalRadius>(mode_); }

  /// Same spec with its radius scaled by `factor` (used for negative controls).
  ConfidenceSpec scaled(double factor) const;
  double scale() const { return scale_; }

 private:
  std::variant<FixedRadius, TheoreticalRadius> mode_{FixedRadius{}};
  double scale_ = 1.0;
};

class Estimator {
 public:
  enum class FactorPath {
    Auto,      // rank-1 update when rho == 1, refactorization otherwise
    Refactor,  // always refactorize V from the accumulated Gram
  };

  Estimator(int dim, double lambda, double rho = 1.0);

  /// Absorbs one observation r ~ phi^T z.
  void update(const Vec& phi, double reward);

  int dim() const { return dim_; }
  double lambda() const { return lambda_; }
  double rho() const { return rho_; }
  std::int64_t count() const { return count_; }
  const Vec& info() const { return info_; }
  const Mat& chol() const { return chol_; }
  const Vec& zhat() const { return zhat_; }
  /// Decayed data Gram sum w_i phi_i phi_i^T (without the ridge term).
  const Mat& gram() const { return gram_; }

  /// V = R^T R.
  Mat precision() const;
  double log_det() const;

  double beta(const ConfidenceSpec& spec) const;
  /// ||z - zhat||_V
  double mahalanobis(const Vec& z) const;
  /// ||x||_{V^-1} = ||R^-T x||
  double inverse_norm(const Vec& x) const;
  /// log(1 + ||phi||^2_{V^-1}), the log-det increase from absorbing phi.
  double d_gap(const Vec& phi) const;

  /// `count` points drawn uniformly from {z : ||z - zhat||_V <= radius}.
  std::vector<Vec> sample_ellipsoid(double radius, int count, Rng& rng) const;
  /// One draw from N(zhat, V^-1).
  Vec sample_posterior(Rng& rng) const;

  void set_factor_path(FactorPath path) { path_ = path; }

  nlohmann::json to_json() const;
  static Estimator from_json(const nlohmann::json& j);

 private:
  void rank_one_update(Vec x);
  void refactorize();
  void solve_estimate();
  void check_diagonal() const;
  Vec solve_upper(const Vec& rhs) const;        // R x = rhs
  Vec solve_upper_trans(const Vec& rhs) const;  // R^T x = rhs

  int dim_;
  double lambda_;
  double rho_;
  FactorPath path_ = FactorPath::Auto;
  std::int64_t count_ = 0;
  Vec info_;
  Mat gram_;
  Mat chol_;
  Vec zhat_;
};

}  // namespace optibfm
