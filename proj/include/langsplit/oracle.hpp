#pragma once

// Analytic ground truth: Gaussian mixtures pushed through the forward
// processes in closed form, their scores, and Gaussian KL divergences.

#include "langsplit/core.hpp"
#include "langsplit/forward.hpp"
#include "langsplit/rng.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace langsplit {

struct Gaussian {
  Vector mean;
  Matrix covariance;
};

/// Finite mixture of full-covariance Gaussians in d <= 16 dimensions.
class GaussianMixture {
 public:
  static constexpr Eigen::Index kMaxDim = 16;

  /// Weights must be positive and sum to 1 within 1e-9 (they are then
  /// renormalized exactly); covariances must be SPD.
  GaussianMixture(Vector weights, std::vector<Vector> means, std::vector<Matrix> covariances);

  static GaussianMixture gaussian(Vector mean, Matrix covariance);
  /// Components with covariance variance_i * I.
  static GaussianMixture isotropic(Vector weights, std::vector<Vector> means, const std::vector<double>& variances);

  Eigen::Index dim() const { return dim_; }
  std::size_t size() const { return means_.size(); }
  const Vector& weights() const { return weights_; }
  const Vector& mean(std::size_t i) const { return means_[i]; }
  const Matrix& covariance(std::size_t i) const { return covariances_[i]; }

  Vector mixture_mean() const;
  Matrix mixture_covariance() const;

  double log_density(const Vector& x) const;
  /// log p at each column of X.
  Vector log_density(const Matrix& X) const;
  Vector score(const Vector& x) const;
  /// grad log p at each column of X (d x n). Computed in log space, so
  /// finite for every finite input.
  Matrix score(const Matrix& X) const;

  /// Sample j comes from stream (seed, j).
  Matrix sample(Eigen::Index n, std::uint64_t seed) const;
  /// One draw: a uniform picks the component, then d normals.
  Vector sample(RngStream& rng) const;

 private:
  struct Cache {
    Eigen::LLT<Matrix> chol;
    double log_norm;  // log w_i - (d log 2 pi + log det Sigma_i) / 2
  };
  void evaluate(const Matrix& X, Vector* log_p, Matrix* score) const;

  Eigen::Index dim_ = 0;
  Vector weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covariances_;
  std::vector<Cache> cache_;
};

/// A mixture pushed to a noise level: component i becomes
/// N(a mu_i, a^2 Sigma_i + b^2 I) with (a, b) the marginal coefficients.
class PerturbedMixture {
 public:
  PerturbedMixture(GaussianMixture base, Parameterization param, double level);

  const GaussianMixture& base() const { return base_; }
  const GaussianMixture& marginal() const { return marginal_; }
  Parameterization param() const { return param_; }
  double level() const { return level_; }
  MarginalCoefficients coefficients() const { return coeffs_; }
  Eigen::Index dim() const { return base_.dim(); }

  double log_density(const Vector& x) const { return marginal_.log_density(x); }
  Vector score(const Vector& x) const { return marginal_.score(x); }
  Matrix score(const Matrix& X) const { return marginal_.score(X); }
  Matrix sample(Eigen::Index n, std::uint64_t seed) const { return marginal_.sample(n, seed); }

  /// The model output a perfect network of this parameterization's native
  /// kind would produce at X: VP score, VE noise -sigma s_z, RF velocity
  /// -(s s_r + r) / (1 - s).
  Matrix native_prediction(const Matrix& X) const;

 private:
  GaussianMixture base_;
  Parameterization param_;
  double level_;
  MarginalCoefficients coeffs_;
  GaussianMixture marginal_;
};

PerturbedMixture perturb(const GaussianMixture& gm, Parameterization param, double level);

double log_density(const PerturbedMixture& pm, const Vector& x);
Vector score(const PerturbedMixture& pm, const Vector& x);

/// Closed-form KL(p || q). Throws ArgumentError for non-SPD covariances.
double kl_gaussian(const Gaussian& p, const Gaussian& q);

struct QuadratureResult {
  double value;
  double richardson_error;  // |I_h - I_2h| / 3
  bool accuracy_warning;
};

/// Trapezoid rule over a uniform 1D grid.
double trapezoid(const Vector& values, double h);

/// Trapezoid estimate of int p log(p / q) on a uniform grid. Warns when the
/// Richardson error estimate exceeds `tolerance`.
QuadratureResult quadrature_kl(const std::function<double(double)>& p_density,
                               const std::function<double(double)>& q_density, double x_min, double x_max,
                               int n_points, double tolerance = 1e-6);

}  // namespace langsplit
