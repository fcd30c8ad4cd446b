#include "langsplit/oracle.hpp"

#include "langsplit/convert.hpp"
#include "langsplit/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace langsplit {
namespace {

double log_det(const Eigen::LLT<Matrix>& chol) {
  return 2.0 * chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Eigen::LLT<Matrix> spd_factor(const Matrix& cov, const char* what) {
  if (cov.rows() != cov.cols()) throw ArgumentError(std::string(what) + " covariance is not square");
  if (!cov.allFinite()) throw ArgumentError(std::string(what) + " covariance has non-finite entries");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    throw ArgumentError(std::string(what) + " covariance is not symmetric");
  Eigen::LLT<Matrix> chol(cov);
  if (chol.info() != Eigen::Success) throw ArgumentError(std::string(what) + " covariance is not positive definite");
  return chol;
}

}  // namespace

GaussianMixture::GaussianMixture(Vector weights, std::vector<Vector> means, std::vector<Matrix> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
  if (means_.empty()) throw ArgumentError("mixture needs at least one component");
  if (weights_.size() != Eigen::Index(means_.size()) || covariances_.size() != means_.size())
    throw ArgumentError("mixture weights, means and covariances differ in length");
  dim_ = means_.front().size();
  if (dim_ < 1 || dim_ > kMaxDim) throw ArgumentError("mixture dimension must be in [1, 16]");
  if ((weights_.array() <= 0.0).any() || !weights_.allFinite())
    throw ArgumentError("mixture weights must be positive");
  const double total = weights_.sum();
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("mixture weights must sum to 1");
  weights_ /= total;

  const double log_2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < means_.size(); ++i) {
    if (means_[i].size() != dim_ || covariances_[i].rows() != dim_)
      throw ArgumentError("mixture component " + std::to_string(i) + " has the wrong dimension");
    if (!means_[i].allFinite()) throw ArgumentError("mixture mean is not finite");
    Eigen::LLT<Matrix> chol = spd_factor(covariances_[i], "mixture component");
    const double ln = std::log(weights_(i)) - 0.5 * (double(dim_) * log_2pi + log_det(chol));
    cache_.push_back({std::move(chol), ln});
  }
}

GaussianMixture GaussianMixture::gaussian(Vector mean, Matrix covariance) {
  return GaussianMixture(Vector::Ones(1), {std::move(mean)}, {std::move(covariance)});
}

GaussianMixture GaussianMixture::isotropic(Vector weights, std::vector<Vector> means,
                                           const std::vector<double>& variances) {
  if (variances.size() != means.size()) throw ArgumentError("one variance per component is required");
  std::vector<Matrix> covs;
  for (std::size_t i = 0; i < means.size(); ++i)
    covs.push_back(variances[i] * Matrix::Identity(means[i].size(), means[i].size()));
  return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
}

Vector GaussianMixture::mixture_mean() const {
  Vector m = Vector::Zero(dim_);
  for (std::size_t i = 0; i < size(); ++i) m += weights_(i) * means_[i];
  return m;
}

Matrix GaussianMixture::mixture_covariance() const {
  const Vector m = mixture_mean();
  Matrix c = Matrix::Zero(dim_, dim_);
  for (std::size_t i = 0; i < size(); ++i) {
    const Vector dm = means_[i] - m;
    c += weights_(i) * (covariances_[i] + dm * dm.transpose());
  }
  return c;
}

void GaussianMixture::evaluate(const Matrix& X, Vector* log_p, Matrix* score) const {
  if (X.rows() != dim_) throw ArgumentError("evaluation points have the wrong dimension");
  const Eigen::Index n = X.cols();
  const std::size_t k = size();

  // Per-component log weight+density and precision-weighted displacement.
  Matrix comp_log(Eigen::Index(k), n);
  std::vector<Matrix> pulls(score ? k : 0);
  for (std::size_t i = 0; i < k; ++i) {
    Matrix diff = (-X).colwise() + means_[i];  // mu_i - x
    const auto& L = cache_[i].chol.matrixL();
    Matrix y = L.solve(diff);
    comp_log.row(Eigen::Index(i)) = (cache_[i].log_norm - 0.5 * y.colwise().squaredNorm().array()).matrix();
    if (score) {
      cache_[i].chol.matrixU().solveInPlace(y);  // Sigma^{-1} (mu_i - x)
      pulls[i] = std::move(y);
    }
  }

  const Eigen::RowVectorXd max_log = comp_log.colwise().maxCoeff();
  const Matrix shifted = (comp_log.rowwise() - max_log).array().exp().matrix();
  const Eigen::RowVectorXd total = shifted.colwise().sum();
  if (log_p) *log_p = (max_log.array() + total.array().log()).transpose().matrix();
  if (score) {
    score->setZero(dim_, n);
    for (std::size_t i = 0; i < k; ++i) {
      const Eigen::RowVectorXd resp = shifted.row(Eigen::Index(i)).array() / total.array();
      *score += (pulls[i].array().rowwise() * resp.array()).matrix();
    }
  }
}

double GaussianMixture::log_density(const Vector& x) const {
  Vector lp;
  evaluate(x, &lp, nullptr);
  return lp(0);
}

Vector GaussianMixture::log_density(const Matrix& X) const {
  Vector lp;
  evaluate(X, &lp, nullptr);
  return lp;
}

Vector GaussianMixture::score(const Vector& x) const {
  Matrix s;
  evaluate(x, nullptr, &s);
  return s.col(0);
}

Matrix GaussianMixture::score(const Matrix& X) const {
  Matrix s;
  evaluate(X, nullptr, &s);
  return s;
}

Vector GaussianMixture::sample(RngStream& rng) const {
  const double u = rng.uniform();
  std::size_t comp = 0;
  double acc = weights_(0);
  while (u > acc && comp + 1 < size()) acc += weights_(Eigen::Index(++comp));
  Vector xi(dim_);
  rng.fill_normal(xi);
  return means_[comp] + cache_[comp].chol.matrixL() * xi;
}

Matrix GaussianMixture::sample(Eigen::Index n, std::uint64_t seed) const {
  Matrix out(dim_, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    RngStream rng(seed, std::uint64_t(j));
    out.col(j) = sample(rng);
  }
  return out;
}

namespace {

GaussianMixture push_forward(const GaussianMixture& base, MarginalCoefficients c) {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  const Eigen::Index d = base.dim();
  for (std::size_t i = 0; i < base.size(); ++i) {
    means.push_back(c.scale * base.mean(i));
    covs.push_back(c.scale * c.scale * base.covariance(i) + c.noise_std * c.noise_std * Matrix::Identity(d, d));
  }
  return GaussianMixture(base.weights(), std::move(means), std::move(covs));
}

}  // namespace

PerturbedMixture::PerturbedMixture(GaussianMixture base, Parameterization param, double level)
    : base_(std::move(base)),
      param_(param),
      level_(level),
      coeffs_(ForwardSpec(param).marginal(level)),
      marginal_(push_forward(base_, coeffs_)) {}

Matrix PerturbedMixture::native_prediction(const Matrix& X) const {
  const Matrix s = marginal_.score(X);
  switch (param_) {
    case Parameterization::vp: return s;
    case Parameterization::ve_karras: return noise_from_ve_score(s, level_);
    case Parameterization::rectified_flow: return velocity_from_rf_score(s, X, level_);
  }
  return s;
}

PerturbedMixture perturb(const GaussianMixture& gm, Parameterization param, double level) {
  return PerturbedMixture(gm, param, level);
}

double log_density(const PerturbedMixture& pm, const Vector& x) { return pm.log_density(x); }
Vector score(const PerturbedMixture& pm, const Vector& x) { return pm.score(x); }

double kl_gaussian(const Gaussian& p, const Gaussian& q) {
  const Eigen::Index d = p.mean.size();
  if (d < 1 || q.mean.size() != d || p.covariance.rows() != d || q.covariance.rows() != d)
    throw ArgumentError("Gaussian KL needs matching dimensions");
  const Eigen::LLT<Matrix> cp = spd_factor(p.covariance, "KL first-argument");
  const Eigen::LLT<Matrix> cq = spd_factor(q.covariance, "KL second-argument");
  const Vector dm = q.mean - p.mean;
  const double trace_term = cq.solve(p.covariance).trace();
  const double mahalanobis = dm.dot(cq.solve(dm));
  const double kl = 0.5 * (trace_term + mahalanobis - double(d) + log_det(cq) - log_det(cp));
  return std::max(kl, 0.0);
}

double trapezoid(const Vector& values, double h) {
  if (values.size() < 2) return 0.0;
  return h * (values.sum() - 0.5 * (values(0) + values(values.size() - 1)));
}

QuadratureResult quadrature_kl(const std::function<double(double)>& p_density,
                               const std::function<double(double)>& q_density, double x_min, double x_max,
                               int n_points, double tolerance) {
  if (n_points < 5 || !(x_max > x_min)) throw ArgumentError("quadrature grid needs >= 5 points on a nonempty interval");
  // Odd point count so the coarse (every other point) grid shares the end points.
  if (n_points % 2 == 0) ++n_points;
  const double h = (x_max - x_min) / double(n_points - 1);
  Vector integrand(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double x = x_min + h * double(i);
    const double p = p_density(x);
    const double q = q_density(x);
    if (p < 0.0 || q < 0.0) throw ArgumentError("densities must be nonnegative");
    integrand(i) = p > 0.0 ? p * (std::log(p) - std::log(q)) : 0.0;
  }
  const double fine = trapezoid(integrand, h);
  Vector coarse_values(n_points / 2 + 1);
  for (Eigen::Index i = 0; i < coarse_values.size(); ++i) coarse_values(i) = integrand(2 * i);
  const double coarse = trapezoid(coarse_values, 2.0 * h);
  const double err = std::abs(fine - coarse) / 3.0;
  return {fine, err, !(err <= tolerance)};
}

}  // namespace langsplit
