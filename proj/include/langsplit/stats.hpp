#pragma once

#include "langsplit/core.hpp"

namespace langsplit {

/// Per-coordinate moments of the columns of a d x n ensemble.
struct SampleMoments {
  Eigen::Index n = 0;
  Vector mean;
  Vector variance;  // unbiased
  Vector m3;        // third central moment
  Vector m4;        // fourth central moment
  Vector m6;        // sixth central moment

  Vector se_mean() const { return (variance / double(n)).cwiseSqrt(); }
  /// Large-sample standard error of the variance estimate: sqrt((m4 - var^2) / n).
  Vector se_variance() const {
    return ((m4.array() - variance.array().square()).max(0.0) / double(n)).sqrt().matrix();
  }
  /// Large-sample standard error of the third central moment:
  /// sqrt((m6 - m3^2 - 6 m4 var + 9 var^3) / n).
  Vector se_m3() const {
    const auto v = variance.array();
    return ((m6.array() - m3.array().square() - 6.0 * m4.array() * v + 9.0 * v.cube()).max(0.0) / double(n))
        .sqrt()
        .matrix();
  }
  Vector skewness() const { return (m3.array() / variance.array().pow(1.5)).matrix(); }
  Vector excess_kurtosis() const { return (m4.array() / variance.array().square() - 3.0).matrix(); }
};

inline SampleMoments sample_moments(const Matrix& x) {
  SampleMoments m;
  m.n = x.cols();
  if (m.n < 2) throw ArgumentError("moments need at least two samples");
  m.mean = x.rowwise().mean();
  const Matrix c = x.colwise() - m.mean;
  m.variance = c.array().square().rowwise().sum() / double(m.n - 1);
  m.m3 = c.array().cube().rowwise().sum() / double(m.n);
  m.m4 = c.array().square().square().rowwise().sum() / double(m.n);
  m.m6 = c.array().square().cube().rowwise().sum() / double(m.n);
  return m;
}

inline Matrix sample_covariance(const Matrix& x) {
  const Vector mean = x.rowwise().mean();
  const Matrix c = x.colwise() - mean;
  return c * c.transpose() / double(x.cols() - 1);
}

/// Fraction of columns whose coordinate `row` lies below `threshold`.
inline double fraction_below(const Matrix& x, Eigen::Index row, double threshold) {
  return (x.row(row).array() < threshold).cast<double>().mean();
}

}  // namespace langsplit

namespace langsplit {

/// Gauss-Hermite rule for E[f(xi)], xi ~ N(0, 1) (probabilists' weight),
/// from the eigen-decomposition of the Jacobi matrix (Golub-Welsch).
/// Weights sum to one.
struct QuadratureRule {
  Vector nodes;
  Vector weights;
};

inline QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw ArgumentError("quadrature needs at least one node");
  Matrix jacobi = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(double(k));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
  return {eig.eigenvalues(), eig.eigenvectors().row(0).transpose().array().square().matrix()};
}

}  // namespace langsplit
