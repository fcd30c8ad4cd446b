#include "langsplit/verify.hpp"

#include "langsplit/convert.hpp"
#include "langsplit/fokker_planck.hpp"
#include "langsplit/forward.hpp"
#include "langsplit/io.hpp"
#include "langsplit/langevin.hpp"
#include "langsplit/reverse.hpp"
#include "langsplit/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>

namespace langsplit {

namespace {

constexpr std::array<Parameterization, 3> kParams{Parameterization::vp, Parameterization::ve_karras,
                                                  Parameterization::rectified_flow};
constexpr std::array<PredictionKind, 3> kKinds{PredictionKind::score, PredictionKind::noise,
                                               PredictionKind::velocity};
constexpr std::array<ModelType, 4> kRows{ModelType::vp_sde, ModelType::vp_ode, ModelType::ve_karras,
                                         ModelType::rectified_flow};
constexpr std::array<ModelType, 3> kLossRows{ModelType::vp_sde, ModelType::ve_karras, ModelType::rectified_flow};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string str(std::string_view s) { return std::string(s); }

class Collector {
 public:
  explicit Collector(std::string suite) : suite_(std::move(suite)) {}
  void add(std::string name, bool pass, std::string detail) {
    results_.push_back({suite_, std::move(name), pass, std::move(detail)});
  }
  /// "value <= bound" style property.
  void at_most(std::string name, double value, double bound, const std::string& what = "worst") {
    add(std::move(name), value <= bound, what + " " + num(value) + " <= " + num(bound));
  }
  std::vector<PropertyResult> take() { return std::move(results_); }

 private:
  std::string suite_;
  std::vector<PropertyResult> results_;
};

std::uint64_t seed_of(const SuiteOptions& o, std::uint64_t k) { return o.seed * 1000003ULL + k; }

// Level of each parameterization at VE-equivalent noise sigma.
double level_for_sigma(Parameterization p, double sigma) {
  switch (p) {
    case Parameterization::vp: return 1.0 / (1.0 + sigma * sigma);
    case Parameterization::ve_karras: return sigma;
    case Parameterization::rectified_flow: return sigma / (1.0 + sigma);
  }
  return sigma;
}

// x0 and eps written in parameterization p straight from the forward-process
// definitions: a x0 + b eps with (a, b) = (sqrt(alpha), sqrt(1-alpha)),
// (1, sigma), (1-s, s).
ParamPointd observation(Parameterization p, double sigma, const Vector& x0, const Vector& eps) {
  const double l = level_for_sigma(p, sigma);
  switch (p) {
    case Parameterization::vp: return {p, std::sqrt(l) * x0 + std::sqrt(1.0 - l) * eps, l};
    case Parameterization::ve_karras: return {p, x0 + l * eps, l};
    case Parameterization::rectified_flow: return {p, (1.0 - l) * x0 + l * eps, l};
  }
  return {};
}

double mid_level(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return 0.5;
    case Parameterization::ve_karras: return 1.0;
    case Parameterization::rectified_flow: return 0.4;
  }
  return 0.5;
}

GaussianMixture gaussian1d(double mean, double var) {
  return GaussianMixture::gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, var));
}

GaussianMixture symmetric_bimodal(double offset, double var) {
  return GaussianMixture::isotropic(Vector::Constant(2, 0.5),
                                    {Vector::Constant(1, -offset), Vector::Constant(1, offset)}, {var, var});
}

GaussianMixture skewed_2d() {
  Matrix c0(2, 2), c1(2, 2);
  c0 << 0.5, 0.2, 0.2, 0.3;
  c1 << 0.2, -0.05, -0.05, 0.4;
  return GaussianMixture((Vector(2) << 0.3, 0.7).finished(),
                         {(Vector(2) << -1.0, 0.5).finished(), (Vector(2) << 1.5, -0.5).finished()}, {c0, c1});
}

double sample_sd(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

double mean_se(const Vector& v, double* mean) {
  *mean = v.mean();
  return std::sqrt((v.array() - *mean).square().sum() / double(v.size() - 1) / double(v.size()));
}

// Least-squares slope of log(y) against log(x).
double log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= double(x.size());
  my /= double(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------- core

std::vector<PropertyResult> core_suite(const SuiteOptions& o) {
  Collector c("core");
  const Eigen::Index n = o.quick ? 100000 : 1000000;
  {
    RngStream rng(seed_of(o, 1), 0);
    const double dt = 0.25;
    const BrownianIncrement inc = draw_increment(rng, dt, n);
    const Matrix row = inc.noise.transpose();
    const SampleMoments m = sample_moments(row);
    const double mean_z = std::abs(m.mean(0)) / m.se_mean()(0);
    const double var_z = std::abs(m.variance(0) - dt) / m.se_variance()(0);
    c.at_most("Brownian increment mean 0", mean_z, 4.0, "|mean| in SE");
    c.at_most("Brownian increment variance dt", var_z, 4.0, "|var - dt| in SE");
    // Fourth moment 3 dt^2, with SE from the eighth moment 105 dt^4.
    const double m4 = row.array().pow(4).mean();
    const double se4 = std::sqrt((105.0 - 9.0) / double(n)) * dt * dt;
    c.at_most("Brownian increment fourth moment 3 dt^2", std::abs(m4 - 3.0 * dt * dt) / se4, 4.0, "error in SE");
  }
  {
    RngStream rng(seed_of(o, 2), 0);
    int mismatches = 0;
    const int trials = o.quick ? 200 : 1000;
    for (int k = 0; k < trials; ++k) {
      const Parameterization p = kParams[std::size_t(k % 3)];
      const double sigma = std::exp(8.0 * rng.uniform() - 4.0);
      const ParamPointd pt{p, rng.normal_vector(1 + k % 4) * std::exp(6.0 * rng.uniform() - 3.0),
                           level_for_sigma(p, sigma)};
      const ParamPointd back = point_from_json(parse_json(dump_json(to_json(pt)), "point"));
      if (back.param != pt.param || back.level != pt.level || back.state.size() != pt.state.size() ||
          !(back.state.array() == pt.state.array()).all())
        ++mismatches;
    }
    c.add("point JSON round trip is bit-exact", mismatches == 0,
          std::to_string(mismatches) + " of " + std::to_string(trials) + " differ");
  }
  return c.take();
}

// ---------------------------------------------------------------- conversions

std::vector<PropertyResult> conversions_suite(const SuiteOptions& o) {
  Collector c("conversions");
  const int trials = o.quick ? 1000 : 10000;
  std::uint64_t stream = 0;
  for (Parameterization a : kParams)
    for (Parameterization b : kParams) {
      RngStream rng(seed_of(o, 10), stream++);
      double worst = 0.0;
      for (int k = 0; k < trials; ++k) {
        const Eigen::Index d = 1 + k % 3;
        const double sigma = 30.0 * rng.uniform();
        const Vector x0 = 2.0 * rng.normal_vector(d);
        const Vector eps = rng.normal_vector(d);
        worst = std::max(worst, roundtrip_report(observation(a, sigma, x0, eps), b).max_abs_roundtrip_error);
      }
      c.at_most("point round trip " + str(to_string(a)) + " -> " + str(to_string(b)), worst, 1e-12);
    }
  {
    // convert_point against the forward-process definitions.
    RngStream rng(seed_of(o, 11), 0);
    double worst = 0.0;
    for (int k = 0; k < trials / 5; ++k) {
      const Eigen::Index d = 1 + k % 4;
      const double sigma = 20.0 * rng.uniform();
      const Vector x0 = 2.0 * rng.normal_vector(d);
      const Vector eps = rng.normal_vector(d);
      for (Parameterization a : kParams)
        for (Parameterization b : kParams) {
          const ParamPointd got = convert_point(observation(a, sigma, x0, eps), b);
          const ParamPointd want = observation(b, sigma, x0, eps);
          worst = std::max(worst, std::abs(got.level - want.level) / std::max(1.0, want.level));
          worst = std::max(worst, (got.state - want.state).cwiseAbs().maxCoeff() /
                                      std::max(1.0, want.state.cwiseAbs().maxCoeff()));
        }
    }
    c.at_most("point conversion matches the forward-process definitions", worst, 1e-12);
  }
  stream = 0;
  for (PredictionKind a : kKinds)
    for (PredictionKind b : kKinds)
      for (PredictionKind k3 : kKinds) {
        if (a == b || b == k3 || a == k3) continue;
        RngStream rng(seed_of(o, 12), stream++);
        double worst = 0.0;
        for (int k = 0; k < trials; ++k) {
          // Equivalent sigma log-uniform in [1e-2, 1e2]; below that the VP
          // coordinate 1 - alpha ~ sigma^2 itself loses relative precision.
          const Eigen::Index d = 1 + k % 3;
          const double sigma = std::pow(10.0, -2.0 + 4.0 * rng.uniform());
          const Vector x0 = 2.0 * rng.normal_vector(d);
          const Vector eps = rng.normal_vector(d);
          const Predictiond p{a, rng.normal_vector(d), observation(native_param(a), sigma, x0, eps)};
          const Predictiond direct = convert_prediction(p, k3);
          const Predictiond twostep = convert_prediction(convert_prediction(p, b), k3);
          const double scale = std::max(1.0, direct.value.cwiseAbs().maxCoeff());
          worst = std::max(worst, (direct.value - twostep.value).cwiseAbs().maxCoeff() / scale);
        }
        c.at_most("prediction triangle " + str(to_string(a)) + " -> " + str(to_string(b)) + " -> " +
                      str(to_string(k3)),
                  worst, 1e-12);
      }
  return c.take();
}

// ---------------------------------------------------------------- oracle

std::vector<PropertyResult> oracle_suite(const SuiteOptions& o) {
  Collector c("oracle");
  const GaussianMixture gm = skewed_2d();
  {
    // |fd - s| / max(1, |s|): the score vanishes at stationary points.
    RngStream rng(seed_of(o, 20), 0);
    const double step = 1e-5;
    const int points = o.quick ? 200 : 1000;
    for (Parameterization p : kParams) {
      double worst = 0.0;
      for (double level : {clean_level(p), 0.4, p == Parameterization::vp ? 0.05 : 0.8}) {
        const PerturbedMixture pm = perturb(gm, p, level);
        for (int k = 0; k < points; ++k) {
          const Vector x = 2.0 * rng.normal_vector(2);
          const Vector s = pm.score(x);
          for (int i = 0; i < 2; ++i) {
            Vector xp = x, xm = x;
            xp(i) += step;
            xm(i) -= step;
            const double fd = (pm.log_density(xp) - pm.log_density(xm)) / (2.0 * step);
            worst = std::max(worst, std::abs(fd - s(i)) / std::max(1.0, std::abs(s(i))));
          }
        }
      }
      c.at_most("score matches finite differences (" + str(to_string(p)) + ", 3 levels)", worst, 1e-6);
    }
  }
  {
    // VP score converted to VE noise / RF velocity against the mixture
    // perturbed natively in VE / RF.
    RngStream rng(seed_of(o, 21), 0);
    double worst = 0.0;
    for (int k = 0; k < (o.quick ? 200 : 1000); ++k) {
      const double alpha = 0.02 + 0.96 * rng.uniform();
      const Vector x = rng.normal_vector(2);
      const PerturbedMixture vp = perturb(gm, Parameterization::vp, alpha);
      const Predictiond s{PredictionKind::score, vp.native_prediction(x), {Parameterization::vp, x, alpha}};
      for (PredictionKind kind : {PredictionKind::noise, PredictionKind::velocity}) {
        const Predictiond got = convert_prediction(s, kind);
        const Vector want = perturb(gm, got.at.param, got.at.level).native_prediction(got.at.state);
        worst = std::max(worst, (got.value - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff()));
      }
    }
    c.at_most("analytic score converts to the analytic noise and velocity", worst, 1e-10);
  }
  {
    const Eigen::Index n = o.quick ? 20000 : 100000;
    const Matrix x0 = gm.sample(n, seed_of(o, 22));
    for (Parameterization p : kParams) {
      const double level = p == Parameterization::vp ? 0.4 : 0.6;
      const MarginalCoefficients mc = ForwardSpec(p).marginal(level);
      Matrix xt(2, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        RngStream rng(seed_of(o, 23), std::uint64_t(j));
        xt.col(j) = mc.scale * x0.col(j) + mc.noise_std * rng.normal_vector(2);
      }
      const PerturbedMixture pm = perturb(gm, p, level);
      const SampleMoments m = sample_moments(xt);
      const Vector mean = pm.marginal().mixture_mean();
      const Vector var = pm.marginal().mixture_covariance().diagonal();
      double worst = 0.0;
      for (int i = 0; i < 2; ++i) {
        worst = std::max(worst, std::abs(m.mean(i) - mean(i)) / m.se_mean()(i));
        worst = std::max(worst, std::abs(m.variance(i) - var(i)) / m.se_variance()(i));
      }
      c.at_most("pushforward of samples matches the perturbed mixture (" + str(to_string(p)) + ")", worst, 4.0,
                "worst error in SE");
    }
  }
  return c.take();
}

// ---------------------------------------------------------------- forward

std::vector<PropertyResult> forward_suite(const SuiteOptions& o) {
  Collector c("forward");
  const Eigen::Index n = o.quick ? 20000 : 100000;
  struct Case {
    Parameterization p;
    double clock_end;
    int steps;
  };
  const Vector x0 = (Vector(2) << 1.5, -0.5).finished();
  const double skew_tol = 4.0 * std::sqrt(6.0 / double(n));
  const double kurt_tol = 4.0 * std::sqrt(24.0 / double(n));
  for (const Case& cs : {Case{Parameterization::vp, 3.0, 600}, Case{Parameterization::ve_karras, 2.0, 400},
                         Case{Parameterization::rectified_flow, 0.95, 950}}) {
    const ForwardSpec spec(cs.p);
    const std::vector<double> grid = uniform_clock_grid(cs.clock_end, cs.steps);
    const std::vector<int> record{cs.steps / 5, 2 * cs.steps / 5, 3 * cs.steps / 5, 4 * cs.steps / 5, cs.steps};
    const ForwardEnsemble e = simulate_forward(spec, x0, n, grid, record, seed_of(o, 30), o.workers);
    // Exact moments of the Euler-Maruyama chain give the O(dt) bias.
    const SchemeMoments em = euler_maruyama_moments(spec, grid);
    double worst_ratio = 0.0, worst_shape = 0.0, worst_bias = 0.0;
    for (std::size_t r = 0; r < record.size(); ++r) {
      const MarginalCoefficients mc = spec.marginal(e.levels[r]);
      const SampleMoments m = sample_moments(e.states[r]);
      const Matrix cov = sample_covariance(e.states[r]);
      const double var = mc.noise_std * mc.noise_std;
      const double mean_bias = std::abs(em.mean_factor[std::size_t(record[r])] - mc.scale);
      const double var_bias = std::abs(em.variance[std::size_t(record[r])] - var);
      worst_bias = std::max({worst_bias, mean_bias, var_bias / var});
      for (Eigen::Index i = 0; i < 2; ++i) {
        const double mean_tol = 4.0 * m.se_mean()(i) + mean_bias * std::abs(x0(i));
        const double var_tol = 4.0 * m.se_variance()(i) + var_bias;
        worst_ratio = std::max({worst_ratio, std::abs(m.mean(i) - mc.scale * x0(i)) / mean_tol,
                                std::abs(m.variance(i) - var) / var_tol});
        worst_shape = std::max({worst_shape, std::abs(m.skewness()(i)) / skew_tol,
                                std::abs(m.excess_kurtosis()(i)) / kurt_tol});
      }
      worst_ratio = std::max(worst_ratio, std::abs(cov(0, 1)) / (4.0 * var / std::sqrt(double(n))));
    }
    const std::string label = str(to_string(cs.p));
    c.add("SDE moments match the closed-form marginal at 5 levels (" + label + ")", worst_ratio <= 1.0,
          "worst error / (4 SE + bias) " + num(worst_ratio) + " <= 1, largest relative bias " + num(worst_bias));
    c.add("marginals stay Gaussian (" + label + ")", worst_shape <= 1.0,
          "worst |skew|, |excess kurtosis| / 4 SE " + num(worst_shape) + " <= 1");
  }
  return c.take();
}

// ---------------------------------------------------------------- langevin

std::vector<PropertyResult> langevin_suite(const SuiteOptions& o) {
  Collector c("langevin");
  const auto unit_rate = [](double) { return 1.0; };
  {
    const LangevinSpec spec{[](const Matrix& x, double) -> Matrix { return -x; }, unit_rate, Parameterization::vp,
                            1.0};
    Matrix x0(1, 10000);
    RngStream init(seed_of(o, 40), 0);
    for (Eigen::Index j = 0; j < x0.cols(); ++j) x0(0, j) = 5.0 + init.normal();
    const LangevinRun run = run_langevin(spec, x0, 0.0, 1e-3, 10000, seed_of(o, 41), 0, o.workers);
    const SampleMoments m = sample_moments(run.states);
    c.at_most("N(0, 1) from N(5, 1): mean", std::abs(m.mean(0)), 0.05, "|mean|");
    c.at_most("N(0, 1) from N(5, 1): variance", std::abs(m.variance(0) - 1.0), 0.1, "|var - 1|");
  }
  {
    const GaussianMixture gm = symmetric_bimodal(1.5, 0.5);
    const LangevinSpec spec{[gm](const Matrix& x, double) -> Matrix { return gm.score(x); }, unit_rate,
                            Parameterization::vp, 1.0};
    const LangevinRun run =
        run_langevin(spec, Matrix::Constant(1, 10000, 1.5), 0.0, 5e-3, 6000, seed_of(o, 42), 0, o.workers);
    const SampleMoments m = sample_moments(run.states);
    const double var = gm.mixture_covariance()(0, 0);
    c.at_most("bimodal from one mode: mean", std::abs(m.mean(0)), 0.05, "|mean|");
    c.at_most("bimodal from one mode: variance", std::abs(m.variance(0) / var - 1.0), 0.1, "relative error");
    c.at_most("bimodal from one mode: mode mass", std::abs(fraction_below(run.states, 0, 0.0) - 0.5), 0.02,
              "|mass - 1/2|");
  }
  {
    const LangevinSpec spec{[](const Matrix& x, double) -> Matrix { return Matrix::Zero(x.rows(), x.cols()); },
                            unit_rate, Parameterization::vp, 1.0};
    const Eigen::Index n = 20000;
    const LangevinRun run = run_langevin(spec, Matrix::Zero(1, n), 0.0, 0.01, 150, seed_of(o, 43), 50, o.workers);
    double worst = 0.0;
    for (const MomentTracePoint& p : run.trace) {
      if (p.step == 0) continue;
      const double var = 2.0 * p.tau;
      worst = std::max(worst, std::abs(p.variance(0) - var) / (var * std::sqrt(2.0 / double(n))));
    }
    c.at_most("zero score is Brownian motion with variance 2 tau", worst, 4.0, "worst error in SE");
  }
  return c.take();
}

// ---------------------------------------------------------------- split

// Langevin rate g(tau) per row, written out independently of langevin_rate.
double expected_rate(ModelType row, double tau) {
  switch (row) {
    case ModelType::vp_sde: return 1.0;
    case ModelType::vp_ode: return 0.5;
    case ModelType::ve_karras: return tau;
    case ModelType::rectified_flow: return tau / (1.0 - tau);
  }
  return 0.0;
}

double split_level(Parameterization p) {
  return p == Parameterization::vp ? 0.6 : (p == Parameterization::ve_karras ? 0.8 : 0.4);
}

ScoreField perturbed_score(const GaussianMixture& gm, ModelType row) {
  return [gm, row](const Matrix& x, double level) -> Matrix { return perturb(gm, param_of(row), level).score(x); };
}

std::vector<PropertyResult> split_suite(const SuiteOptions& o) {
  Collector c("split");
  for (ModelType row : kRows) {
    RngStream rng(seed_of(o, 50), std::uint64_t(row));
    double drift_err = 0.0, var_err = 0.0;
    bool nonnegative = true;
    for (int k = 0; k < 1000; ++k) {
      const Eigen::Index d = 1 + k % 3;
      const Vector x = 3.0 * rng.normal_vector(d);
      const Vector s = 3.0 * rng.normal_vector(d);
      const double tau = row == ModelType::rectified_flow ? 0.999 * rng.uniform() : 20.0 * rng.uniform();
      const SplitCoefficients sc = split_coefficients(row, x, s, tau);
      const double g = expected_rate(row, tau);
      const Vector want = g * s;
      const double scale = std::max({1.0, want.cwiseAbs().maxCoeff(), sc.forward.drift.cwiseAbs().maxCoeff()});
      drift_err = std::max(drift_err, (sc.forward.drift + sc.reverse.drift - want).cwiseAbs().maxCoeff() / scale);
      var_err = std::max(var_err, std::abs(sc.forward.variance_rate + sc.reverse.variance_rate - 2.0 * g) /
                                      std::max(1.0, 2.0 * g));
      nonnegative = nonnegative && sc.forward.variance_rate >= 0.0 && sc.reverse.variance_rate >= 0.0;
    }
    c.add("drift and variance additivity (" + str(to_string(row)) + ", 1000 draws)",
          drift_err <= 1e-12 && var_err <= 1e-12 && nonnegative,
          "drift " + num(drift_err) + ", variance " + num(var_err) + " <= 1e-12");
  }

  const GaussianMixture gm = symmetric_bimodal(1.5, 0.5);
  const Eigen::Index n = o.quick ? 20000 : 100000;
  const double dtau = 0.01;
  for (ModelType row : kRows) {
    const Parameterization p = param_of(row);
    const double level = split_level(p);
    const PerturbedMixture pm = perturb(gm, p, level);
    const Matrix x = pm.sample(n, seed_of(o, 51));
    const Matrix y = split_step_ensemble({row, perturbed_score(gm, row)}, x, level, dtau, seed_of(o, 52), o.workers);
    const SampleMoments before = sample_moments(x), after = sample_moments(y);
    const double var = pm.marginal().mixture_covariance()(0, 0);
    // One Euler step of the stationary dynamics moves the moments by
    // O(g dtau) relative to the variance scale.
    const double bias = expected_rate(row, split_tau(row, level)) * dtau * var;
    const double k = 4.0 * std::sqrt(2.0);
    const double r_mean = std::abs(after.mean(0) - before.mean(0)) / (k * before.se_mean()(0) + bias);
    const double r_var = std::abs(after.variance(0) - before.variance(0)) / (k * before.se_variance()(0) + bias);
    const double r_m3 = std::abs(after.m3(0) - before.m3(0)) / (k * before.se_m3()(0) + bias * std::sqrt(var));
    c.add("split step keeps the perturbed mixture's first three moments (" + str(to_string(row)) + ")",
          std::max({r_mean, r_var, r_m3}) <= 1.0,
          "worst change / (4 SE + g dtau var) " + num(std::max({r_mean, r_var, r_m3})) + " <= 1");
  }

  const std::vector<double> steps{2e-3, 1e-3, 5e-4, 2.5e-4, 1.25e-4};
  for (ModelType row : kRows) {
    const double level = split_level(param_of(row));
    const SplitStep step{row, perturbed_score(gm, row)};
    std::vector<double> mean_gap, var_gap;
    for (double h : steps) {
      const TransitionDefect d = split_transition_defect(step, 0.7, level, h);
      mean_gap.push_back(d.mean);
      var_gap.push_back(d.variance);
    }
    const double sm = log_slope(steps, mean_gap), sv = log_slope(steps, var_gap);
    c.add("split transition matches a Langevin step to O(dtau^2) (" + str(to_string(row)) + ")",
          std::abs(sm - 2.0) <= 0.2 && std::abs(sv - 2.0) <= 0.2,
          "observed orders: mean " + num(sm) + ", variance " + num(sv) + " (2 +- 0.2)");
  }
  return c.take();
}

// ---------------------------------------------------------------- duality

// Exact probability-flow map of 1D Gaussian data N(mu, v) between two levels:
// affine between standardized values.
double gaussian_flow(Parameterization p, double mu, double v, double x_start, double start_level, double level) {
  auto moments = [&](double lvl) -> std::pair<double, double> {
    switch (p) {
      case Parameterization::vp: return {std::sqrt(lvl) * mu, std::sqrt(lvl * v + 1.0 - lvl)};
      case Parameterization::ve_karras: return {mu, std::sqrt(v + lvl * lvl)};
      case Parameterization::rectified_flow:
        return {(1.0 - lvl) * mu, std::sqrt((1.0 - lvl) * (1.0 - lvl) * v + lvl * lvl)};
    }
    return {0.0, 1.0};
  };
  const auto [m0, s0] = moments(start_level);
  const auto [m1, s1] = moments(level);
  return m1 + s1 / s0 * (x_start - m0);
}

double integrate_ode(const ReverseSpec& spec, double x, int steps) {
  const std::vector<double> grid = reverse_time_grid(spec, steps);
  RngStream rng(0, 0);
  Vector state = Vector::Constant(1, x);
  for (int k = 0; k < steps; ++k)
    state = reverse_step(spec, state, grid[std::size_t(k)], grid[std::size_t(k) + 1] - grid[std::size_t(k)], rng);
  return state(0);
}

std::vector<PropertyResult> duality_suite(const SuiteOptions& o) {
  Collector c("duality");
  const GaussianMixture data = symmetric_bimodal(2.0, 0.1);
  const double exact_var = data.mixture_covariance()(0, 0);
  DualityOptions opt;
  opt.n_chains = o.quick ? 20000 : 100000;
  opt.steps = 400;
  opt.checkpoints = 5;
  opt.seed = seed_of(o, 60);
  opt.workers = o.workers;
  for (ModelType row : kRows) {
    const DualityReport r = duality_check(data, row, opt);
    const Matrix& x = r.terminal;
    double left_sum = 0.0, right_sum = 0.0;
    Eigen::Index left = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x(0, j) < 0.0) {
        left_sum += x(0, j);
        ++left;
      } else {
        right_sum += x(0, j);
      }
    }
    const double mass = double(left) / double(x.cols());
    const double mean_err = std::max(std::abs(left_sum / double(std::max<Eigen::Index>(left, 1)) + 2.0),
                                     std::abs(right_sum / double(std::max<Eigen::Index>(x.cols() - left, 1)) - 2.0));
    const double var_err = std::abs(sample_moments(x).variance(0) / exact_var - 1.0);
    const std::string label = str(to_string(row));
    c.add("regenerates the bimodal data (" + label + ")",
          mean_err <= 0.05 && std::abs(mass - 0.5) <= 0.02 && var_err <= 0.05,
          "mode means " + num(mean_err) + " <= 0.05, mass |" + num(mass) + " - 0.5| <= 0.02, variance " +
              num(var_err) + " <= 0.05");
    c.add("checkpoints match the perturbed mixture (" + label + ")", r.pass,
          "worst error / allowance " + num(r.worst_ratio) + " <= 1 over " + std::to_string(r.rows.size()) +
              " checkpoints");
  }
  {
    // A field of another kind, converted inside the step or wrapped
    // beforehand, drives identical trajectories.
    const Field score = oracle_field(data, PredictionKind::score);
    bool identical = true;
    for (ModelType row : kRows) {
      const double start = default_start_clock(row, 2.1);
      GenerateOptions g;
      g.n_chains = 500;
      g.steps = 100;
      g.seed = seed_of(o, 61);
      const Matrix a = generate(ReverseSpec(row, score, start), g).states;
      const Matrix b = generate(ReverseSpec(row, converted_field(score, native_kind(param_of(row))), start), g).states;
      identical = identical && (a.array() == b.array()).all();
    }
    c.add("converted fields give bitwise-identical trajectories", identical, identical ? "all 4 rows" : "mismatch");
  }
  {
    bool monotone = true;
    for (ModelType row : kRows) {
      const ReverseSpec spec(row, oracle_field(data, native_kind(param_of(row))), default_start_clock(row, 2.1));
      for (GridKind kind : {GridKind::uniform, GridKind::karras})
        for (int steps : {1, 7, 400}) {
          const std::vector<double> grid = reverse_time_grid(spec, steps, kind);
          for (std::size_t k = 1; k < grid.size(); ++k)
            if (!(equivalent_sigma(spec.param(), spec.level_at(grid[k])) <
                  equivalent_sigma(spec.param(), spec.level_at(grid[k - 1]))))
              monotone = false;
        }
    }
    c.add("noise level strictly decreases along every reverse grid", monotone, "4 rows, uniform and Karras grids");
  }
  {
    // Gaussian data: the Euler map of an ODE row is affine, x -> c1 x + c0, so
    // two trajectories give the terminal mean and variance of the initial
    // N(0, sd^2) ensemble exactly.
    const double mu = 1.5, v = 0.3;
    const GaussianMixture gauss = gaussian1d(mu, v);
    for (ModelType row : {ModelType::vp_ode, ModelType::ve_karras, ModelType::rectified_flow}) {
      const double start = row == ModelType::vp_ode ? 6.0 : row == ModelType::ve_karras ? 20.0 : 1.0 - 1e-3;
      const ReverseSpec spec(row, oracle_field(gauss, native_kind(param_of(row))), start);
      const double l0 = spec.level_at(spec.reverse_start()), l1 = spec.level_at(spec.reverse_end());
      const double sd = spec.initial_noise_std();
      const double f0 = gaussian_flow(spec.param(), mu, v, 0.0, l0, l1);
      const double f1 = gaussian_flow(spec.param(), mu, v, 1.0, l0, l1) - f0;
      std::vector<double> mean_bias, var_bias;
      for (int steps : {400, 800, 1600}) {
        const double c0 = integrate_ode(spec, 0.0, steps);
        const double c1 = integrate_ode(spec, 1.0, steps) - c0;
        mean_bias.push_back(std::abs(c0 - f0));
        var_bias.push_back(std::abs(c1 * c1 - f1 * f1) * sd * sd);
      }
      const double rm1 = mean_bias[0] / mean_bias[1], rm2 = mean_bias[1] / mean_bias[2];
      const double rv1 = var_bias[0] / var_bias[1], rv2 = var_bias[1] / var_bias[2];
      const bool ok = std::abs(rm1 - 2.0) <= 0.3 && std::abs(rm2 - 2.0) <= 0.2 && std::abs(rv1 - 2.0) <= 0.3 &&
                      std::abs(rv2 - 2.0) <= 0.2;
      c.add("halving the step halves the terminal moment bias (" + str(to_string(row)) + ")", ok,
            "mean bias ratios " + num(rm1) + ", " + num(rm2) + "; variance " + num(rv1) + ", " + num(rv2) +
                " (2 +- 0.3, 0.2)");
    }
  }
  {
    // Both VP rows target the same data distribution.
    GenerateOptions g;
    g.n_chains = o.quick ? 10000 : 40000;
    g.steps = 400;
    g.grid = GridKind::karras;
    g.seed = seed_of(o, 62);
    g.workers = o.workers;
    const double T = default_start_clock(ModelType::vp_sde, 2.1);
    const SampleMoments sde =
        sample_moments(generate(ReverseSpec(ModelType::vp_sde, oracle_field(data, PredictionKind::score), T), g).states);
    g.seed = seed_of(o, 63);
    const SampleMoments ode =
        sample_moments(generate(ReverseSpec(ModelType::vp_ode, oracle_field(data, PredictionKind::score), T), g).states);
    const double mean_r = std::abs(sde.mean(0) - ode.mean(0)) / (4.0 * std::hypot(sde.se_mean()(0), ode.se_mean()(0)));
    const double var_r = std::abs(sde.variance(0) - ode.variance(0)) /
                         (4.0 * std::hypot(sde.se_variance()(0), ode.se_variance()(0)) +
                          2.0 * kDualityBiasPerStep / g.steps * exact_var);
    const double m3_r = std::abs(sde.m3(0) - ode.m3(0)) / (4.0 * std::hypot(sde.se_m3()(0), ode.se_m3()(0)));
    c.add("VP-SDE and VP-ODE agree in the first three moments", std::max({mean_r, var_r, m3_r}) <= 1.0,
          "worst gap / joint tolerance " + num(std::max({mean_r, var_r, m3_r})) + " <= 1");
  }
  return c.take();
}

// ---------------------------------------------------------------- dsm

Matrix batch_states(const DenoisingBatch& b, Parameterization p, double level) {
  const MarginalCoefficients mc = ForwardSpec(p).marginal(level);
  return mc.scale * b.x0 + mc.noise_std * b.noise;
}

// Regression target of each row's DSM loss.
Matrix dsm_target(const DenoisingBatch& b, Parameterization p, double level) {
  switch (p) {
    case Parameterization::vp: return -b.noise / ForwardSpec(p).marginal(level).noise_std;
    case Parameterization::ve_karras: return b.noise;
    case Parameterization::rectified_flow: return b.noise - b.x0;
  }
  return b.noise;
}

MLPModel small_model(PredictionKind kind, Eigen::Index dim, Activation act, std::uint64_t seed) {
  MLPConfig cfg;
  cfg.dim = dim;
  cfg.hidden = {8, 8};
  cfg.activation = act;
  return MLPModel::create(kind, cfg, seed);
}

MLPModel linear_model(PredictionKind kind) {
  MLPConfig cfg;
  cfg.dim = 1;
  cfg.hidden = {};
  cfg.activation = Activation::identity;
  cfg.level_embedding = false;
  cfg.bias = false;
  return MLPModel::create(kind, cfg, 0);
}

std::vector<PropertyResult> dsm_suite(const SuiteOptions& o) {
  Collector c("dsm");
  const GaussianMixture data = symmetric_bimodal(1.5, 0.3);
  const Eigen::Index n = o.quick ? 5000 : 20000;
  for (ModelType row : kLossRows) {
    const Parameterization p = param_of(row);
    const double level = mid_level(p);
    const LossSpec spec{row, WeightMode::paper, {}, {}};
    const double w = loss_weight(spec, level);
    const PerturbedMixture pm(data, p, level);
    const DenoisingBatch batch = fixed_level_batch(data, level, n, seed_of(o, 70));
    const Matrix x = batch_states(batch, p, level);
    const Matrix t_cond = dsm_target(batch, p, level);
    const Matrix t_marg = pm.native_prediction(x);

    // Parameter-free part of DSM - SM per sample: w (|t_cond|^2 - |t_marg|^2).
    const Vector fixed = w * (t_cond.colwise().squaredNorm() - t_marg.colwise().squaredNorm()).transpose();
    double fixed_mean = 0.0;
    const double fixed_se = mean_se(fixed, &fixed_mean);

    // C = w (E|t_cond|^2 - E|t_marg|^2), the second expectation by quadrature.
    const MarginalCoefficients mc = ForwardSpec(p).marginal(level);
    double cond_sq = 1.0;
    if (p == Parameterization::vp) cond_sq = 1.0 / (mc.noise_std * mc.noise_std);
    if (p == Parameterization::rectified_flow)
      cond_sq = 1.0 + data.mixture_covariance()(0, 0) + std::pow(data.mixture_mean()(0), 2);
    const int cells = 40001;
    const double x_lo = -15.0, x_hi = 15.0, dx = (x_hi - x_lo) / (cells - 1);
    Matrix grid(1, cells);
    for (int i = 0; i < cells; ++i) grid(0, i) = x_lo + i * dx;
    const Matrix pred_grid = pm.native_prediction(grid);
    const Vector dens = pm.marginal().log_density(grid).array().exp().matrix();
    const double C = w * (cond_sq - trapezoid(dens.cwiseProduct(pred_grid.colwise().squaredNorm().transpose()), dx));
    const std::string label = str(to_string(row));
    c.add("constant C >= 0 and matches quadrature (" + label + ")",
          C >= 0.0 && std::abs(fixed_mean - C) <= 4.0 * fixed_se,
          "C " + num(C) + ", Monte-Carlo " + num(fixed_mean) + " +- " + num(4.0 * fixed_se));

    double worst = 0.0;
    std::string worst_detail;
    for (PredictionKind kind : kKinds) {
      MLPModel model = small_model(kind, 1, Activation::silu, 5);
      const Vector theta0 = model.parameters();
      std::vector<double> diffs;
      double max_cross_se = 0.0;
      RngStream rng(seed_of(o, 71), std::uint64_t(kind));
      for (int k = 0; k < 20; ++k) {
        model.set_parameters(theta0 + 0.3 * rng.normal_vector(theta0.size()));
        const double dsm = dsm_loss(model, batch, spec, false).loss;
        const double sm = sm_loss_oracle(model, pm, x, spec);
        diffs.push_back(dsm - sm);
        // Per-sample cross term 2 w <pred, t_cond - t_marg>: the only
        // parameter-dependent part of the difference, zero in expectation.
        const Matrix pred = converted_field(model_field(model), native_kind(p)).eval(x, level);
        const Vector cross = 2.0 * w * (pred.cwiseProduct(t_cond - t_marg)).colwise().sum().transpose();
        double m = 0.0;
        max_cross_se = std::max(max_cross_se, mean_se(cross, &m));
      }
      const double ratio = sample_sd(diffs) / (3.0 * max_cross_se);
      if (ratio >= worst) {
        worst = ratio;
        worst_detail = "sd " + num(sample_sd(diffs)) + " vs bound " + num(3.0 * max_cross_se) + " (" +
                       str(to_string(kind)) + " model)";
      }
    }
    c.add("DSM - SM constant over 20 perturbations (" + label + ")", worst <= 1.0, worst_detail);
  }

  // Data N(0, 1): the native prediction at a fixed level is linear with slope
  // -1 (VP, alpha = 1/2), 0.4 (VE, sigma = 2), -0.4 / 0.58 (RF, s = 0.3).
  const GaussianMixture normal = GaussianMixture::gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
  struct Case {
    ModelType row;
    double level;
    double slope;
  };
  for (const Case& cs : {Case{ModelType::vp_sde, 0.5, -1.0}, Case{ModelType::ve_karras, 2.0, 0.4},
                         Case{ModelType::rectified_flow, 0.3, -0.4 / 0.58}}) {
    const MLPModel init = linear_model(native_kind(param_of(cs.row)));
    const MarginalCoefficients mc = ForwardSpec(param_of(cs.row)).marginal(cs.level);
    auto fit = [&](WeightMode mode) {
      // Step scaled by the unweighted curvature 2 E[x^2]; the weight stays in
      // the step, so the two modes follow different trajectories.
      TrainConfig cfg;
      cfg.optimizer = OptimizerKind::sgd_momentum;
      cfg.learning_rate = 6e-4 / (2.0 * (mc.scale * mc.scale + mc.noise_std * mc.noise_std));
      cfg.batch_size = 8192;
      cfg.steps = 2000;
      cfg.levels = {cs.level, cs.level};
      cfg.seed = seed_of(o, 72);
      return train(init, normal, {cs.row, mode, {}, {}}, cfg).model.parameters()(0);
    };
    const double paper = fit(WeightMode::paper), uniform = fit(WeightMode::uniform);
    const double tol = 0.01 * std::abs(cs.slope);
    const double err = std::max(std::abs(paper - cs.slope), std::abs(uniform - cs.slope));
    const std::string label = str(to_string(cs.row));
    c.add("linear model argmin matches the closed form (" + label + ")", err <= tol,
          "paper " + num(paper) + ", uniform " + num(uniform) + ", exact " + num(cs.slope) + " (1%)");
    c.add("paper and uniform weighting share the argmin (" + label + ")", std::abs(paper - uniform) <= tol,
          "|difference| " + num(std::abs(paper - uniform)) + " <= " + num(tol));
  }
  return c.take();
}

// ---------------------------------------------------------------- gradients

std::vector<PropertyResult> gradients_suite(const SuiteOptions& o) {
  Collector c("gradients");
  Vector a(2), b(2), w(2);
  a << -1.0, 0.5;
  b << 1.2, -0.4;
  w << 0.4, 0.6;
  const GaussianMixture data = GaussianMixture::isotropic(w, {a, b}, {0.2, 0.35});
  const double h = 1e-5;
  int model_index = 0;
  for (ModelType row : kLossRows) {
    // Levels away from the clamps keep the 1/sigma and (1-s)/s weights O(1).
    const double lo = row == ModelType::ve_karras ? 0.1 : 0.05;
    const double hi = row == ModelType::ve_karras ? 5.0 : 0.95;
    for (WeightMode mode : {WeightMode::paper, WeightMode::uniform}) {
      const LossSpec spec{row, mode, {}, {}};
      int checked = 0, failed = 0;
      double worst = 0.0;
      for (PredictionKind kind : kKinds)
        for (Activation act : {Activation::tanh, Activation::silu}) {
          MLPModel model = small_model(kind, 2, act, seed_of(o, 80) + std::uint64_t(model_index));
          RngStream rng(seed_of(o, 81), std::uint64_t(model_index++));
          const DenoisingBatch batch = sample_denoising_batch(data, 16, lo, hi, rng);
          const Vector grad = dsm_loss(model, batch, spec).gradients.flatten();
          const Vector theta = model.parameters();
          for (Eigen::Index i = 0; i < theta.size(); ++i) {
            Vector t = theta;
            t(i) = theta(i) + h;
            model.set_parameters(t);
            const double up = dsm_loss(model, batch, spec, false).loss;
            t(i) = theta(i) - h;
            model.set_parameters(t);
            const double down = dsm_loss(model, batch, spec, false).loss;
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::abs(fd - grad(i)) / std::max({std::abs(fd), std::abs(grad(i)), 1e-6});
            worst = std::max(worst, rel);
            if (rel > 1e-4) ++failed;
            ++checked;
          }
        }
      c.add("gradients match central differences (" + str(to_string(row)) + ", " + str(to_string(mode)) +
                " weight)",
            failed == 0,
            std::to_string(checked - failed) + "/" + std::to_string(checked) + " within 1e-4, worst " + num(worst));
    }
  }
  return c.take();
}

// ---------------------------------------------------------------- training

double nearest_mode_fraction(const Matrix& x, const Vector& a, const Vector& b) {
  Eigen::Index count = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if ((x.col(j) - a).squaredNorm() < (x.col(j) - b).squaredNorm()) ++count;
  return double(count) / double(x.cols());
}

// Relative L2 error of a noise-kind field against the oracle noise at VE level
// sigma, over samples of the perturbed data.
double noise_field_error(const Field& noise_field, const GaussianMixture& data, double sigma, Eigen::Index n,
                         std::uint64_t seed) {
  const PerturbedMixture pm = perturb(data, Parameterization::ve_karras, sigma);
  const Matrix z = pm.sample(n, seed);
  const Matrix exact = pm.native_prediction(z);
  return std::sqrt((noise_field.eval(z, sigma) - exact).squaredNorm() / exact.squaredNorm());
}

std::vector<PropertyResult> training_suite(const SuiteOptions& o) {
  Collector c("training");
  TrainingExperiment ex = default_training_experiment();
  ex.train.seed = seed_of(o, ex.train.seed);
  std::string tag;
  if (o.quick) {
    // Smoke run: a tenth of the schedule at a quarter of the batch, with
    // loose bounds that only catch a broken pipeline.
    ex.train.steps /= 10;
    ex.train.batch_size = std::max<Eigen::Index>(64, ex.train.batch_size / 4);
    ex.max_relative_l2 = 0.3;
    ex.max_mass_error = 0.1;
    tag = " [quick smoke run]";
  }
  const MLPModel init = MLPModel::create(PredictionKind::score, ex.model, ex.model_seed);
  {
    TrainConfig zero = ex.train;
    zero.steps = 0;
    const TrainResult r = train(init, ex.data, ex.loss, zero);
    const bool same = (r.model.parameters().array() == init.parameters().array()).all();
    c.add("zero training steps return the initialization", same, same ? "bitwise equal" : "parameters changed");
  }
  const TrainResult trained = train(init, ex.data, ex.loss, ex.train);
  double worst = 0.0;
  std::string levels;
  for (double alpha : ex.mid_levels) {
    const FieldErrorReport e = field_error(trained.model, ex.data, alpha, 20000, seed_of(o, 90));
    worst = std::max(worst, e.relative_l2);
    levels += (levels.empty() ? "" : ", ") + num(alpha) + ": " + num(e.relative_l2);
  }
  c.add("trained VP score error on the 90%-mass region at mid levels" + tag, worst <= ex.max_relative_l2,
        "alpha " + levels + " (<= " + num(ex.max_relative_l2) + ")");

  {
    GenerateOptions g;
    g.dim = ex.data.dim();
    g.n_chains = o.quick ? 4000 : 20000;
    g.steps = 400;
    g.grid = GridKind::karras;
    g.seed = seed_of(o, 91);
    g.workers = o.workers;
    const double bound = std::sqrt(ex.data.mixture_covariance().diagonal().maxCoeff() +
                                   ex.data.mixture_mean().squaredNorm());
    const ReverseSpec spec(ModelType::vp_sde, model_field(trained.model),
                           default_start_clock(ModelType::vp_sde, bound));
    const Matrix x = generate(spec, g).states;
    const double mass = nearest_mode_fraction(x, ex.data.mean(0), ex.data.mean(1));
    const double want = ex.data.weights()(0);
    c.add("reverse sampling with the trained field recovers the mode masses" + tag,
          std::abs(mass - want) <= ex.max_mass_error,
          "first-mode mass " + num(mass) + " vs " + num(want) + " (+- " + num(ex.max_mass_error) + ")");
  }

  {
    // Soft check: a VP score model converted to noise form and a natively
    // trained noise model reach comparable oracle error.
    const GaussianMixture gauss = gaussian1d(1.0, 0.5);
    MLPConfig mc;
    mc.dim = 1;
    mc.hidden = {32, 32};
    TrainConfig cfg;
    cfg.steps = o.quick ? 800 : 3000;
    cfg.batch_size = 512;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed_of(o, 92);
    const MLPModel score_model = train(MLPModel::create(PredictionKind::score, mc, 1), gauss,
                                       custom_loss(ModelType::vp_sde, "sigma2"), cfg)
                                     .model;
    const MLPModel noise_model = train(MLPModel::create(PredictionKind::noise, mc, 1), gauss,
                                       {ModelType::ve_karras, WeightMode::uniform, {}, {}}, cfg)
                                     .model;
    const double tol = o.quick ? 0.3 : 0.1;
    double worst_gap = 0.0, worst_err = 0.0;
    for (double sigma : {0.5, 1.0, 2.0}) {
      const double e_vp = noise_field_error(converted_field(model_field(score_model), PredictionKind::noise), gauss,
                                            sigma, 10000, seed_of(o, 93));
      const double e_ve = noise_field_error(model_field(noise_model), gauss, sigma, 10000, seed_of(o, 93));
      worst_gap = std::max(worst_gap, std::abs(e_vp - e_ve));
      worst_err = std::max({worst_err, e_vp, e_ve});
    }
    c.add("VP score model in noise form matches a native noise model" + tag, worst_err <= tol && worst_gap <= tol,
          "worst error " + num(worst_err) + ", worst gap " + num(worst_gap) + " (<= " + num(tol) + ")");
  }
  return c.take();
}

// ---------------------------------------------------------------- fokker-planck

double normal_kl(double m1, double v1, double m2, double v2) {
  return 0.5 * (v1 / v2 + (m1 - m2) * (m1 - m2) / v2 - 1.0 + std::log(v2 / v1));
}

// N(m0, v0) after time t of dx = -x dt + sqrt(2) dW.
std::pair<double, double> ou_moments(double m0, double v0, double t) {
  return {m0 * std::exp(-t), 1.0 + (v0 - 1.0) * std::exp(-2.0 * t)};
}

double l1_error(const GridDensity& rho, double mean, double var) {
  const GridDensity exact = gaussian_density(rho.grid, mean, var, false);
  return rho.grid.h() * (rho.values - exact.values).cwiseAbs().sum();
}

GridDensity solve_to(const FPOperator& op, GridDensity rho, double horizon) {
  const double limit = max_stable_dt(op, rho.grid, 0.0);
  const int steps = int(std::ceil(horizon / (0.4 * limit)));
  return fp_solve(op, std::move(rho), 0.0, horizon / steps, steps);
}

struct OUExperiment {
  double worst_defect = 0.0;
  bool monotone = true;
  double worst_kl_error = 0.0;  // against the closed form, relative
};

OUExperiment two_gaussian_ou(int cells, FluxScheme flux) {
  FPOperator op = ou_operator(1.0, std::sqrt(2.0));
  op.flux = flux;
  const Grid1D grid(-12.0, 12.0, cells);
  const double dt = 0.4 * max_stable_dt(op, grid, 0.0);
  const int record = std::max(1, int(0.02 / dt));
  const KLTrace tr = kl_trace(op, gaussian_density(grid, 2.0, 0.5), gaussian_density(grid, -1.0, 2.0), 2.0, dt,
                              TimeScheme::explicit_euler, record);
  OUExperiment e;
  const auto& pts = tr.points;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i)
    e.worst_defect = std::max(e.worst_defect, std::abs(pts[i].dkl_dt + pts[i].objective) / pts[i].objective);
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i].kl > pts[i - 1].kl) e.monotone = false;
  for (const KLTracePoint& pt : pts) {
    const auto [m1, v1] = ou_moments(2.0, 0.5, pt.t);
    const auto [m2, v2] = ou_moments(-1.0, 2.0, pt.t);
    const double exact = normal_kl(m1, v1, m2, v2);
    e.worst_kl_error = std::max(e.worst_kl_error, std::abs(pt.kl - exact) / exact);
  }
  return e;
}

std::vector<PropertyResult> fokker_planck_suite(const SuiteOptions& o) {
  Collector c("fokker-planck");
  {
    const double g = 0.8, v0 = 0.1;
    std::vector<double> errs;
    for (int cells : {150, 300, 600})
      errs.push_back(l1_error(solve_to(constant_operator(0.0, g), gaussian_density(Grid1D(-6.0, 6.0, cells), 0.3, v0), 1.0),
                              0.3, v0 + g * g));
    c.add("heat kernel reproduced under refinement", errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5 && errs[2] < 2e-5,
          "L1 errors " + num(errs[0]) + ", " + num(errs[1]) + ", " + num(errs[2]) + " (ratios > 3.5, finest < 2e-5)");
  }
  {
    const FPOperator op = ou_operator(1.0, std::sqrt(2.0));
    const auto [m, v] = ou_moments(2.0, 0.25, 1.0);
    std::vector<double> errs;
    for (int cells : {150, 300, 600})
      errs.push_back(l1_error(solve_to(op, gaussian_density(Grid1D(-8.0, 8.0, cells), 2.0, 0.25), 1.0), m, v));
    c.add("OU transient reproduced under refinement", errs[0] / errs[1] > 3.0 && errs[1] / errs[2] > 3.0 && errs[2] < 1e-4,
          "L1 errors " + num(errs[0]) + ", " + num(errs[1]) + ", " + num(errs[2]) + " (ratios > 3, finest < 1e-4)");
  }
  {
    const FPOperator op = ou_operator(1.0, std::sqrt(2.0));
    const GridDensity start = gaussian_density(Grid1D(-8.0, 8.0, 320), 0.0, 1.0);
    const GridDensity end = fp_solve(op, start, 0.0, 0.5 * max_stable_dt(op, start.grid, 0.0), o.quick ? 2000 : 10000);
    c.at_most("OU keeps N(0, 1) stationary", (end.values - start.values).cwiseAbs().maxCoeff(), 1e-6, "max change");
  }
  std::vector<int> cell_counts{200, 400, 800};
  std::vector<OUExperiment> runs;
  for (int cells : cell_counts) runs.push_back(two_gaussian_ou(cells, FluxScheme::exponential_fitting));
  {
    bool monotone = true;
    for (const OUExperiment& e : runs) monotone = monotone && e.monotone;
    c.add("KL trace is non-increasing", monotone, "3 grids");
  }
  {
    const bool shrinking = runs[1].worst_defect < runs[0].worst_defect && runs[2].worst_defect < runs[1].worst_defect;
    c.add("|dKL/dt + L_t| defect <= 2% and shrinking under refinement",
          runs[0].worst_defect <= 0.02 && shrinking,
          "worst relative defect " + num(runs[0].worst_defect) + ", " + num(runs[1].worst_defect) + ", " +
              num(runs[2].worst_defect) + " at 200/400/800 cells");
  }
  c.at_most("KL matches the closed form for OU-evolved Gaussians (800 cells)", runs[2].worst_kl_error, 1e-3,
            "worst relative error");
  {
    const Grid1D grid(-10.0, 10.0, 2000);
    const GridDensity p = gaussian_density(grid, -2.0, 0.5);
    const GridDensity q = gaussian_density(grid, -1.5, 1.0);
    bool ok = true;
    std::string detail;
    for (const FPOperator& op : {constant_operator(1.0, 0.0),
                                 FPOperator{[](double x, double) { return 0.5 * std::sin(x) - 0.2 * x; },
                                            [](double) { return 0.0; }}}) {
      const KLTrace tr = kl_trace(op, p, q, 1.0, 0.5 * max_stable_dt(op, grid, 0.0), TimeScheme::explicit_euler, 20);
      const double change = std::abs(tr.points.front().kl - tr.points.back().kl);
      const double bound = tr.integrated_drift_dissipation();
      ok = ok && change <= bound && change < 0.01 * tr.points.front().kl;
      detail += (detail.empty() ? "" : "; ") + std::string("|dKL| ") + num(change) + " <= scheme bound " + num(bound);
    }
    c.add("drift-only runs hold KL within the scheme's dissipation", ok, detail);
  }
  return c.take();
}

// ---------------------------------------------------------------- determinism

std::vector<PropertyResult> determinism_suite(const SuiteOptions& o) {
  Collector c("determinism");
  const int many = std::max(3, o.workers + 2);
  const GaussianMixture data = symmetric_bimodal(2.0, 0.1);
  {
    bool same = true;
    for (ModelType row : kRows) {
      const ReverseSpec spec(row, oracle_field(data, native_kind(param_of(row))), default_start_clock(row, 2.1));
      GenerateOptions g;
      g.n_chains = 1001;
      g.steps = 60;
      g.seed = seed_of(o, 100);
      g.checkpoints = {30};
      g.workers = 1;
      const GenerateResult a = generate(spec, g);
      g.workers = many;
      const GenerateResult b = generate(spec, g);
      same = same && (a.states.array() == b.states.array()).all() &&
             (a.snapshots[0].states.array() == b.snapshots[0].states.array()).all();
    }
    c.add("reverse generation is independent of the worker count", same, "1 vs " + std::to_string(many) + " workers");
  }
  {
    const ForwardSpec rf(Parameterization::rectified_flow);
    const std::vector<double> grid = uniform_clock_grid(0.9, 90);
    const ForwardEnsemble a = simulate_forward(rf, Vector::Ones(2), 1001, grid, {30, 90}, seed_of(o, 101), 1);
    const ForwardEnsemble b = simulate_forward(rf, Vector::Ones(2), 1001, grid, {30, 90}, seed_of(o, 101), many);
    const bool same = (a.states[0].array() == b.states[0].array()).all() && (a.states[1].array() == b.states[1].array()).all();
    c.add("forward simulation is independent of the worker count", same, "1 vs " + std::to_string(many) + " workers");
  }
  {
    const LangevinSpec spec{[data](const Matrix& x, double) -> Matrix { return data.score(x); },
                            [](double) { return 1.0; }, Parameterization::vp, 1.0};
    const Matrix x0 = data.sample(997, seed_of(o, 102));
    const bool run_same = (run_langevin(spec, x0, 0.0, 0.01, 50, seed_of(o, 103), 10, 1).states.array() ==
                           run_langevin(spec, x0, 0.0, 0.01, 50, seed_of(o, 103), 10, many).states.array())
                              .all();
    const SplitStep step{ModelType::vp_sde, [data](const Matrix& x, double) -> Matrix { return data.score(x); }};
    const bool split_same = (split_step_ensemble(step, x0, 0.5, 0.01, seed_of(o, 104), 1).array() ==
                             split_step_ensemble(step, x0, 0.5, 0.01, seed_of(o, 104), many).array())
                                .all();
    c.add("Langevin and split ensembles are independent of the worker count", run_same && split_same,
          "1 vs " + std::to_string(many) + " workers");
  }
  {
    MLPConfig mc;
    mc.dim = 2;
    mc.hidden = {16, 16};
    const MLPModel init = MLPModel::create(PredictionKind::score, mc, 3);
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.batch_size = 64;
    cfg.seed = seed_of(o, 105);
    const GaussianMixture d2 = skewed_2d();
    const LossSpec spec{ModelType::vp_sde, WeightMode::paper, {}, {}};
    const bool same = (train(init, d2, spec, cfg).model.parameters().array() ==
                       train(init, d2, spec, cfg).model.parameters().array())
                          .all();
    c.add("training repeats bit for bit", same, "two runs of 100 steps");
  }
  return c.take();
}

using SuiteFn = std::vector<PropertyResult> (*)(const SuiteOptions&);

const std::vector<std::pair<std::string, SuiteFn>>& registry() {
  static const std::vector<std::pair<std::string, SuiteFn>> suites{
      {"core", core_suite},           {"conversions", conversions_suite},
      {"oracle", oracle_suite},       {"forward", forward_suite},
      {"langevin", langevin_suite},   {"split", split_suite},
      {"duality", duality_suite},     {"dsm", dsm_suite},
      {"gradients", gradients_suite}, {"training", training_suite},
      {"fokker-planck", fokker_planck_suite}, {"determinism", determinism_suite},
  };
  return suites;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

std::vector<PropertyResult> run_suite(const std::string& name, const SuiteOptions& options) {
  for (const auto& [suite, fn] : registry())
    if (suite == name) return fn(options);
  std::string known;
  for (const std::string& s : suite_names()) known += (known.empty() ? "" : ", ") + s;
  throw ArgumentError("unknown suite '" + name + "' (known: " + known + ")");
}

std::vector<PropertyResult> run_all(const SuiteOptions& options) {
  std::vector<PropertyResult> out;
  for (const auto& [name, fn] : registry()) {
    std::vector<PropertyResult> r = fn(options);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

bool all_passed(const std::vector<PropertyResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.pass; });
}

TrainingExperiment default_training_experiment() {
  Vector a(2), b(2);
  a << -1.5, 0.5;
  b << 1.5, -0.5;
  TrainingExperiment ex{GaussianMixture::isotropic(Vector::Constant(2, 0.5), {a, b}, {0.25, 0.25}),
                        MLPConfig{},
                        TrainConfig{},
                        custom_loss(ModelType::vp_sde, "sigma2"),
                        0,
                        {0.2, 0.5, 0.8},
                        0.1,
                        0.05};
  ex.model.dim = 2;
  return ex;
}

}  // namespace langsplit
