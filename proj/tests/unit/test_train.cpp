#include "doctest.h"

#include "langsplit/convert.hpp"
#include "langsplit/forward.hpp"
#include "langsplit/reverse.hpp"
#include "langsplit/train.hpp"

#include <array>
#include <cmath>

using namespace langsplit;

namespace {

constexpr std::array<ModelType, 3> kLossRows{ModelType::vp_sde, ModelType::ve_karras, ModelType::rectified_flow};
constexpr std::array<PredictionKind, 3> kKinds{PredictionKind::score, PredictionKind::noise, PredictionKind::velocity};

GaussianMixture bimodal1d() {
  return GaussianMixture::isotropic(Vector::Constant(2, 0.5), {Vector::Constant(1, -1.5), Vector::Constant(1, 1.5)},
                                    {0.3, 0.3});
}

GaussianMixture bimodal2d() {
  Vector a(2), b(2);
  a << -1.0, 0.5;
  b << 1.2, -0.4;
  Vector w(2);
  w << 0.4, 0.6;
  return GaussianMixture::isotropic(w, {a, b}, {0.2, 0.35});
}

// A mid-domain level for each row.
double mid_level(ModelType row) {
  switch (param_of(row)) {
    case Parameterization::vp: return 0.5;
    case Parameterization::ve_karras: return 1.0;
    case Parameterization::rectified_flow: return 0.4;
  }
  return 0.5;
}

// Row states of a batch: scale * x0 + noise_std * noise.
Matrix batch_states(const DenoisingBatch& b, Parameterization p, double level) {
  const MarginalCoefficients c = ForwardSpec(p).marginal(level);
  return c.scale * b.x0 + c.noise_std * b.noise;
}

// Regression target of the row's DSM loss.
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

double sd(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

TEST_CASE("conditional score targets") {
  CHECK(conditional_score_target(ModelType::vp_sde, Vector::Zero(1), Vector::Constant(1, 1.0), 0.75)(0) ==
        doctest::Approx(-2.0).epsilon(1e-15));
  Vector eps(2);
  eps << 0.5, -0.5;
  const Vector ve = conditional_score_target(ModelType::ve_karras, Vector::Zero(2), eps, 2.0);
  CHECK(ve(0) == doctest::Approx(-0.25).epsilon(1e-15));
  CHECK(ve(1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(conditional_score_target(ModelType::rectified_flow, Vector::Ones(1), Vector::Constant(1, 0.3), 0.6)(0) ==
        doctest::Approx(-0.5).epsilon(1e-15));
  for (ModelType row : {ModelType::vp_sde, ModelType::vp_ode, ModelType::ve_karras, ModelType::rectified_flow})
    CHECK(conditional_score_target(row, Vector::Ones(3), Vector::Zero(3), mid_level(row)).isZero(0.0));
  CHECK_THROWS_AS(conditional_score_target(ModelType::vp_sde, Vector::Zero(1), Vector::Ones(1), 1.0), DomainError);
  CHECK_THROWS_AS(conditional_score_target(ModelType::ve_karras, Vector::Zero(1), Vector::Ones(1), 0.0), DomainError);
  CHECK_THROWS_AS(conditional_score_target(ModelType::rectified_flow, Vector::Zero(1), Vector::Ones(1), 0.0),
                  DomainError);
  CHECK_THROWS_AS(conditional_score_target(ModelType::vp_sde, Vector::Zero(2), Vector::Ones(1), 0.5), ArgumentError);
}

TEST_CASE("loss weights") {
  const LossSpec vp{ModelType::vp_sde, WeightMode::paper, {}, {}};
  const LossSpec ve{ModelType::ve_karras, WeightMode::paper, {}, {}};
  const LossSpec rf{ModelType::rectified_flow, WeightMode::paper, {}, {}};
  CHECK(loss_weight(vp, 0.3) == 0.5);
  CHECK(loss_weight(ve, 4.0) == 0.25);
  CHECK(loss_weight(rf, 0.25) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(loss_weight({ModelType::rectified_flow, WeightMode::uniform, {}, {}}, 0.25) == 1.0);
  const LossSpec s2 = custom_loss(ModelType::vp_sde, "sigma2");
  CHECK(loss_weight(s2, 0.25) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(s2.custom_name == "sigma2");
  CHECK(loss_weight(custom_loss(ModelType::ve_karras, "sigma2"), 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(custom_loss(ModelType::vp_sde, "snr"), ArgumentError);
  CHECK_THROWS_AS(loss_weight({ModelType::vp_sde, WeightMode::custom, {}, {}}, 0.5), ArgumentError);
  CHECK(parse_weight_mode(to_string(WeightMode::uniform)) == WeightMode::uniform);
  CHECK_THROWS_AS(parse_weight_mode("snr"), ArgumentError);
}

TEST_CASE("a zero model on noise-free VP and VE batches has zero loss and zero gradient") {
  const GaussianMixture data = bimodal2d();
  for (ModelType row : {ModelType::vp_sde, ModelType::ve_karras}) {
    MLPModel model = small_model(native_kind(param_of(row)), 2, Activation::silu, 4);
    model.set_parameters(Vector::Zero(model.parameter_count()));
    DenoisingBatch batch = fixed_level_batch(data, mid_level(row), 32, 2);
    batch.noise.setZero();
    const LossResult r = dsm_loss(model, batch, {row, WeightMode::paper, {}, {}});
    CHECK(r.loss == 0.0);
    CHECK(r.gradients.flatten().isZero(0.0));
  }
}

TEST_CASE("DSM loss matches a direct evaluation") {
  const GaussianMixture data = bimodal2d();
  for (ModelType row : kLossRows) {
    const Parameterization p = param_of(row);
    const double level = mid_level(row);
    const MLPModel model = small_model(native_kind(p), 2, Activation::tanh, 8);
    const DenoisingBatch batch = fixed_level_batch(data, level, 50, 3);
    const LossSpec spec{row, WeightMode::paper, {}, {}};
    const Matrix residual = model.predict(batch_states(batch, p, level), level) - dsm_target(batch, p, level);
    const double direct = loss_weight(spec, level) * residual.squaredNorm() / 50.0;
    CHECK(dsm_loss(model, batch, spec).loss == doctest::Approx(direct).epsilon(1e-13));
  }
}

TEST_CASE("parameter gradients match central finite differences") {
  const GaussianMixture data = bimodal2d();
  const double h = 1e-5;
  int checked = 0, failed = 0;
  double worst = 0.0;
  for (ModelType row : kLossRows) {
    // Levels away from the clamps keep the 1/sigma and (1-s)/s weights O(1).
    const double lo = row == ModelType::ve_karras ? 0.1 : 0.05;
    const double hi = row == ModelType::ve_karras ? 5.0 : 0.95;
    for (WeightMode mode : {WeightMode::paper, WeightMode::uniform}) {
      const LossSpec spec{row, mode, {}, {}};
      for (PredictionKind kind : kKinds) {
        for (Activation act : {Activation::tanh, Activation::silu}) {
          MLPModel model = small_model(kind, 2, act, 11 + checked);
          RngStream rng(99, std::uint64_t(checked));
          const DenoisingBatch batch = sample_denoising_batch(data, 16, lo, hi, rng);
          const Vector grad = dsm_loss(model, batch, spec).gradients.flatten();
          const Vector theta = model.parameters();
          REQUIRE(grad.size() == theta.size());
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
          model.set_parameters(theta);
        }
      }
    }
  }
  INFO("checked ", checked, " gradients, worst relative error ", worst);
  CHECK(failed == 0);
  CHECK(checked > 5000);
}

TEST_CASE("DSM minus SM is constant in the parameters") {
  const GaussianMixture data = bimodal1d();
  const Eigen::Index n = 20000;
  for (ModelType row : kLossRows) {
    const Parameterization p = param_of(row);
    const double level = mid_level(row);
    const LossSpec spec{row, WeightMode::paper, {}, {}};
    const double w = loss_weight(spec, level);
    const PerturbedMixture pm(data, p, level);
    const DenoisingBatch batch = fixed_level_batch(data, level, n, 21);
    const Matrix x = batch_states(batch, p, level);
    const Matrix t_cond = dsm_target(batch, p, level);
    const Matrix t_marg = pm.native_prediction(x);

    // Exact part of the difference: w (|t_cond|^2 - |t_marg|^2) per sample.
    const Vector fixed = w * (t_cond.colwise().squaredNorm() - t_marg.colwise().squaredNorm()).transpose();
    const double fixed_mean = fixed.mean();
    const double fixed_se = std::sqrt((fixed.array() - fixed_mean).square().sum() / double(n - 1) / double(n));

    // C = w (E|t_cond|^2 - E|t_marg|^2) with the second term by quadrature.
    const MarginalCoefficients c = ForwardSpec(p).marginal(level);
    double cond_sq = 1.0;
    if (p == Parameterization::vp) cond_sq = 1.0 / (c.noise_std * c.noise_std);
    if (p == Parameterization::rectified_flow) cond_sq = 1.0 + data.mixture_covariance()(0, 0) + std::pow(data.mixture_mean()(0), 2);
    const int cells = 40001;
    const double x_lo = -15.0, x_hi = 15.0, dx = (x_hi - x_lo) / (cells - 1);
    Matrix grid(1, cells);
    for (int i = 0; i < cells; ++i) grid(0, i) = x_lo + i * dx;
    const Matrix pred_grid = pm.native_prediction(grid);
    const Vector dens = pm.marginal().log_density(grid).array().exp().matrix();
    const Vector integrand = dens.cwiseProduct(pred_grid.colwise().squaredNorm().transpose());
    const double C = w * (cond_sq - trapezoid(integrand, dx));
    CHECK(C >= 0.0);
    CHECK(std::abs(fixed_mean - C) < 4.0 * fixed_se);

    for (PredictionKind kind : kKinds) {
      MLPModel model = small_model(kind, 1, Activation::silu, 5);
      const Vector theta0 = model.parameters();
      std::vector<double> diffs;
      double max_cross_se = 0.0;
      RngStream rng(314, std::uint64_t(kind));
      for (int k = 0; k < 20; ++k) {
        model.set_parameters(theta0 + 0.3 * rng.normal_vector(theta0.size()));
        const double dsm = dsm_loss(model, batch, spec, false).loss;
        const double sm = sm_loss_oracle(model, pm, x, spec);
        diffs.push_back(dsm - sm);
        // Per-sample cross term 2 w <pred, t_cond - t_marg>; zero mean.
        const Matrix pred = converted_field(model_field(model), native_kind(p)).eval(x, level);
        const Vector cross = 2.0 * w * (pred.cwiseProduct(t_cond - t_marg)).colwise().sum().transpose();
        const double m = cross.mean();
        const double se = std::sqrt((cross.array() - m).square().sum() / double(n - 1) / double(n));
        max_cross_se = std::max(max_cross_se, se);
        CHECK(std::abs(dsm - sm - fixed_mean + m) < 1e-9 * std::max(1.0, std::abs(dsm)));
      }
      const double spread = sd(diffs);
      INFO(to_string(row), " model ", to_string(kind), " sd ", spread, " bound ", 3.0 * max_cross_se);
      CHECK(spread <= 3.0 * max_cross_se);
      CHECK(std::abs(diffs.front() - C) < 4.0 * fixed_se + 4.0 * max_cross_se);
    }
  }
}

TEST_CASE("SM loss vanishes for the exact field") {
  // N(0, 1) data keeps the VP marginal at N(0, 1) with score -x.
  const GaussianMixture data = GaussianMixture::gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
  MLPModel model = linear_model(PredictionKind::score);
  model.set_parameters(Vector::Constant(1, -1.0));
  const PerturbedMixture pm(data, Parameterization::vp, 0.5);
  CHECK(sm_loss_oracle(model, pm, 1000, 1, {ModelType::vp_sde, WeightMode::paper, {}, {}}) < 1e-28);
  CHECK_THROWS_AS(sm_loss_oracle(model, pm, 10, 1, {ModelType::ve_karras, WeightMode::paper, {}, {}}),
                  ArgumentError);
}

TEST_CASE("linear model argmin and weighting neutrality") {
  // Data N(0, 1): the native prediction is linear in the state with slope
  // -1 (VP, alpha = 1/2), sigma / (1 + sigma^2) (VE, sigma = 2) and
  // (2s - 1) / ((1-s)^2 + s^2) (RF, s = 0.3).
  const GaussianMixture data = GaussianMixture::gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
  struct Case {
    ModelType row;
    double level;
    double slope;
  };
  const std::array<Case, 3> cases{Case{ModelType::vp_sde, 0.5, -1.0}, Case{ModelType::ve_karras, 2.0, 0.4},
                                  Case{ModelType::rectified_flow, 0.3, -0.4 / 0.58}};
  for (const Case& c : cases) {
    const MLPModel init = linear_model(native_kind(param_of(c.row)));
    const MarginalCoefficients mc = ForwardSpec(param_of(c.row)).marginal(c.level);
    auto fit = [&](WeightMode mode) {
      const LossSpec spec{c.row, mode, {}, {}};
      // One batch pins the slope to a few percent, so the step is scaled by
      // the unweighted loss curvature 2 E[x^2]: every run converges well
      // inside 2000 steps and its last iterate averages 70 or more batches.
      // The weight is left in the step, so the two modes follow different
      // trajectories.
      const double curvature = 2.0 * (mc.scale * mc.scale + mc.noise_std * mc.noise_std);
      TrainConfig cfg;
      cfg.optimizer = OptimizerKind::sgd_momentum;
      cfg.learning_rate = 6e-4 / curvature;
      cfg.batch_size = 8192;
      cfg.steps = 2000;
      cfg.levels = {c.level, c.level};
      cfg.seed = 8;
      return train(init, data, spec, cfg).model.parameters()(0);
    };
    const double paper = fit(WeightMode::paper);
    const double uniform = fit(WeightMode::uniform);
    INFO(to_string(c.row), " paper ", paper, " uniform ", uniform, " exact ", c.slope);
    CHECK(std::abs(paper - c.slope) < 0.01 * std::abs(c.slope));
    CHECK(std::abs(uniform - c.slope) < 0.01 * std::abs(c.slope));
    CHECK(std::abs(paper - uniform) < 0.01 * std::abs(c.slope));
  }
}

TEST_CASE("training bookkeeping") {
  const GaussianMixture data = bimodal2d();
  const MLPModel init = small_model(PredictionKind::score, 2, Activation::silu, 1);
  const LossSpec spec{ModelType::vp_sde, WeightMode::paper, {}, {}};
  TrainConfig cfg;
  cfg.steps = 0;
  const TrainResult zero = train(init, data, spec, cfg);
  CHECK((zero.model.parameters().array() == init.parameters().array()).all());
  CHECK(zero.trace.empty());
  CHECK(zero.levels.min == 1e-4);

  cfg.steps = 250;
  cfg.batch_size = 32;
  cfg.trace_every = 100;
  const TrainResult a = train(init, data, spec, cfg);
  const TrainResult b = train(init, data, spec, cfg);
  CHECK((a.model.parameters().array() == b.model.parameters().array()).all());
  REQUIRE(a.trace.size() == 3);
  CHECK(a.trace[0].step == 100);
  CHECK(a.trace[2].step == 250);
  CHECK(a.trace[2].loss < a.trace[0].loss);

  CHECK(default_level_range(ModelType::ve_karras, 10.0).max == 10.0);
  CHECK(default_level_range(ModelType::rectified_flow, 0.0).min == 1e-3);
  CHECK_THROWS_AS(default_level_range(ModelType::ve_karras, 1e-3), ArgumentError);
  CHECK(parse_optimizer("sgd-momentum") == OptimizerKind::sgd_momentum);
  CHECK_THROWS_AS(parse_optimizer("lbfgs"), ArgumentError);
}

TEST_CASE("divergence and non-finite outputs raise training errors") {
  const GaussianMixture data = GaussianMixture::gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::sgd_momentum;
  cfg.learning_rate = 50.0;
  cfg.steps = 200;
  cfg.levels = {0.5, 0.5};
  cfg.trace_every = 1;
  try {
    train(linear_model(PredictionKind::score), data, {ModelType::vp_sde, WeightMode::paper, {}, {}}, cfg);
    FAIL("expected divergence");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    CHECK(std::string(e.what()).find("recent trace") != std::string::npos);
  }

  MLPModel model = small_model(PredictionKind::score, 1, Activation::identity, 2);
  model.set_parameters(Vector::Constant(model.parameter_count(), 1e300));
  const DenoisingBatch batch = fixed_level_batch(data, 0.5, 4, 1);
  try {
    dsm_loss(model, batch, {ModelType::vp_sde, WeightMode::paper, {}, {}});
    FAIL("expected a non-finite output error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("RF velocity model learns a Gaussian's velocity field") {
  const GaussianMixture data = GaussianMixture::gaussian(Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.5));
  MLPConfig mc;
  mc.dim = 1;
  mc.hidden = {32, 32};
  const MLPModel init = MLPModel::create(PredictionKind::velocity, mc, 3);
  // Large batches keep the constant-step Adam noise floor under the
  // tolerance; the paper weight (1-s)/s trains the s -> 1 end more weakly,
  // so the check covers the mid levels.
  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch_size = 1024;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  const TrainResult r = train(init, data, {ModelType::rectified_flow, WeightMode::paper, {}, {}}, cfg);
  for (double s : {0.25, 0.5, 0.75}) {
    const FieldErrorReport e = field_error(r.model, data, s, 4000, 12);
    INFO("s = ", s, " relative L2 ", e.relative_l2);
    CHECK(e.relative_l2 <= 0.05);
    CHECK(e.n_used == 3600);
  }
}

TEST_CASE("sampling with a model field does not depend on the worker count") {
  // Vectorized kernels handle a column differently depending on where it sits
  // in the evaluated block, so this only holds with worker-independent blocks.
  MLPConfig mc;
  mc.dim = 2;
  const MLPModel model = MLPModel::create(PredictionKind::score, mc, 5);
  const ReverseSpec spec(ModelType::vp_sde, model_field(model), default_start_clock(ModelType::vp_sde, 2.0));
  GenerateOptions o;
  o.dim = 2;
  o.n_chains = 1001;
  o.steps = 20;
  o.seed = 4;
  const Matrix one = generate(spec, o).states;
  for (int workers : {2, 3, 7}) {
    o.workers = workers;
    CHECK(generate(spec, o).states == one);
  }
}
