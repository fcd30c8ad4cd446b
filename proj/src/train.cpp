#include "langsplit/train.hpp"

#include "langsplit/convert.hpp"
#include "langsplit/forward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace langsplit {

namespace {

// Noise std of the row's forward marginal; rejects zero noise.
double target_noise_std(Parameterization p, double level) {
  check_level(p, level);
  const double b = ForwardSpec(p).marginal(level).noise_std;
  if (!(b > 0.0))
    throw DomainError("conditional score target diverges at zero noise (level " + std::to_string(level) + ")");
  return b;
}

}  // namespace

Vector conditional_score_target(ModelType model_type, const Vector& x0, const Vector& noise, double level) {
  if (x0.size() != noise.size()) throw ArgumentError("x0 and noise dimensions differ");
  return -noise / target_noise_std(param_of(model_type), level);
}

std::string_view to_string(WeightMode m) {
  switch (m) {
    case WeightMode::paper: return "paper";
    case WeightMode::uniform: return "uniform";
    case WeightMode::custom: return "custom";
  }
  return "?";
}

WeightMode parse_weight_mode(std::string_view name) {
  if (name == "paper") return WeightMode::paper;
  if (name == "uniform") return WeightMode::uniform;
  if (name == "custom") return WeightMode::custom;
  throw ArgumentError("unknown weight mode '" + std::string(name) + "'");
}

double loss_weight(const LossSpec& spec, double level) {
  switch (spec.weight_mode) {
    case WeightMode::uniform: return 1.0;
    case WeightMode::custom:
      if (!spec.custom_weight) throw ArgumentError("custom weight mode without a weight function");
      return spec.custom_weight(level);
    case WeightMode::paper:
      switch (param_of(spec.model_type)) {
        case Parameterization::vp: return 0.5;
        case Parameterization::ve_karras: return 1.0 / level;
        case Parameterization::rectified_flow: return (1.0 - level) / level;
      }
  }
  return 1.0;
}

LossSpec custom_loss(ModelType model_type, const std::string& name) {
  LossSpec spec{model_type, WeightMode::custom, {}, name};
  if (name == "sigma2") {
    const Parameterization p = param_of(model_type);
    spec.custom_weight = [p](double level) {
      const double s = equivalent_sigma(p, level);
      return s * s / (1.0 + s * s);
    };
    return spec;
  }
  throw ArgumentError("unknown custom weight '" + name + "' (known: sigma2)");
}

DenoisingBatch sample_denoising_batch(const GaussianMixture& data, Eigen::Index n, double level_min,
                                      double level_max, RngStream& rng) {
  if (n < 1) throw ArgumentError("batch must be nonempty");
  if (!(level_max >= level_min)) throw ArgumentError("level range is empty");
  DenoisingBatch b{Matrix(data.dim(), n), Matrix(data.dim(), n), Vector(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    b.levels(j) = level_min + (level_max - level_min) * rng.uniform();
    b.x0.col(j) = data.sample(rng);
    b.noise.col(j) = rng.normal_vector(data.dim());
  }
  return b;
}

DenoisingBatch fixed_level_batch(const GaussianMixture& data, double level, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw ArgumentError("batch must be nonempty");
  DenoisingBatch b{Matrix(data.dim(), n), Matrix(data.dim(), n), Vector::Constant(n, level)};
  for (Eigen::Index j = 0; j < n; ++j) {
    RngStream rng(seed, std::uint64_t(j));
    b.x0.col(j) = data.sample(rng);
    b.noise.col(j) = rng.normal_vector(data.dim());
  }
  return b;
}

namespace {

// Everything needed to evaluate a model on row states and read its output as
// the row's native prediction: pred = value_coef .* out + state_coef .* model_states.
struct ModelView {
  Matrix model_states;
  Vector model_levels;
  Vector value_coef;
  Vector state_coef;
};

ModelView view_for(const MLPModel& model, Parameterization row_param, const Matrix& states, const Vector& levels) {
  const PredictionKind row_kind = native_kind(row_param);
  const PredictionKind kind = model.prediction_kind();
  const Parameterization model_param = native_param(kind);
  const Eigen::Index n = states.cols();
  ModelView v{Matrix(states.rows(), n), Vector(n), Vector(n), Vector(n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const PointMap<double> pm = point_map(row_param, levels(j), model_param);
    v.model_states.col(j) = pm.state_factor * states.col(j);
    v.model_levels(j) = pm.level;
    const PredictionMap<double> cm = prediction_map(kind, row_kind, model_param, pm.level);
    v.value_coef(j) = cm.value_coef;
    v.state_coef(j) = cm.state_coef;
  }
  return v;
}

void require_finite(const Matrix& out, const Vector& levels, const char* where) {
  if (out.allFinite()) return;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    if (!out.col(j).allFinite()) {
      std::ostringstream msg;
      msg << where << ": non-finite model output at sample " << j << " (model level " << levels(j) << ")";
      throw TrainingError(msg.str());
    }
  }
}

}  // namespace

LossResult dsm_loss(const MLPModel& model, const DenoisingBatch& batch, const LossSpec& spec, bool with_gradients) {
  const Eigen::Index n = batch.x0.cols();
  const Eigen::Index d = model.dim();
  if (n < 1) throw ArgumentError("DSM loss needs a nonempty batch");
  if (batch.x0.rows() != d || batch.noise.rows() != d || batch.noise.cols() != n || batch.levels.size() != n)
    throw ArgumentError("batch shapes do not match the model");

  const Parameterization p = param_of(spec.model_type);
  const ForwardSpec fwd(p);
  Matrix states(d, n);
  Matrix target(d, n);
  Vector weight(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double level = batch.levels(j);
    const double b = target_noise_std(p, level);
    const MarginalCoefficients c = fwd.marginal(level);
    states.col(j) = c.scale * batch.x0.col(j) + c.noise_std * batch.noise.col(j);
    switch (p) {
      case Parameterization::vp: target.col(j) = -batch.noise.col(j) / b; break;
      case Parameterization::ve_karras: target.col(j) = batch.noise.col(j); break;
      case Parameterization::rectified_flow: target.col(j) = batch.noise.col(j) - batch.x0.col(j); break;
    }
    weight(j) = loss_weight(spec, level);
  }

  const ModelView v = view_for(model, p, states, batch.levels);
  MLPModel::Tape tape;
  const Matrix out = model.forward(model.features(v.model_states, v.model_levels), with_gradients ? &tape : nullptr);
  require_finite(out, v.model_levels, "dsm_loss");

  const Matrix pred = out * v.value_coef.asDiagonal() + v.model_states * v.state_coef.asDiagonal();
  const Matrix residual = pred - target;
  LossResult r;
  r.loss = (residual.colwise().squaredNorm().transpose().array() * weight.array()).sum() / double(n);
  if (with_gradients) {
    const Vector scale = (2.0 / double(n)) * weight.cwiseProduct(v.value_coef);
    r.gradients = model.backward(tape, residual * scale.asDiagonal());
  }
  return r;
}

double sm_loss_oracle(const MLPModel& model, const PerturbedMixture& pm, const Matrix& samples,
                      const LossSpec& spec) {
  const Parameterization p = param_of(spec.model_type);
  if (pm.param() != p) throw ArgumentError("perturbed mixture and loss row use different parameterizations");
  const Eigen::Index n = samples.cols();
  if (n < 1) throw ArgumentError("SM loss needs samples");
  const Vector levels = Vector::Constant(n, pm.level());
  const ModelView v = view_for(model, p, samples, levels);
  const Matrix out = model.predict(v.model_states, v.model_levels);
  require_finite(out, v.model_levels, "sm_loss_oracle");
  const Matrix pred = out * v.value_coef.asDiagonal() + v.model_states * v.state_coef.asDiagonal();
  const Matrix target = pm.native_prediction(samples);
  return loss_weight(spec, pm.level()) * (pred - target).colwise().squaredNorm().sum() / double(n);
}

double sm_loss_oracle(const MLPModel& model, const PerturbedMixture& pm, Eigen::Index n_samples,
                      std::uint64_t seed, const LossSpec& spec) {
  return sm_loss_oracle(model, pm, pm.sample(n_samples, seed), spec);
}

LevelRange default_level_range(ModelType model_type, double sigma_max) {
  switch (param_of(model_type)) {
    case Parameterization::vp: return {1e-4, 1.0 - 1e-3};
    case Parameterization::ve_karras:
      if (!(sigma_max > 2e-3)) throw ArgumentError("VE training needs sigma_max > 2e-3");
      return {2e-3, sigma_max};
    case Parameterization::rectified_flow: return {1e-3, 1.0 - 1e-3};
  }
  return {0.0, 1.0};
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd" || name == "sgd-momentum") return OptimizerKind::sgd_momentum;
  throw ArgumentError("unknown optimizer '" + std::string(name) + "'");
}

TrainResult train(MLPModel model, const GaussianMixture& data, const LossSpec& spec, const TrainConfig& config) {
  if (model.dim() != data.dim()) throw ArgumentError("model and data dimensions differ");
  if (config.steps < 0) throw ArgumentError("training steps must be >= 0");
  if (config.batch_size < 1) throw ArgumentError("batch size must be >= 1");
  if (!(config.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");

  LevelRange levels = config.levels;
  if (levels.min == 0.0 && levels.max == 0.0) {
    const Matrix cov = data.mixture_covariance();
    const double bound = std::sqrt(cov.diagonal().maxCoeff() + data.mixture_mean().squaredNorm());
    levels = default_level_range(spec.model_type, 20.0 * bound);
  }
  const Parameterization p = param_of(spec.model_type);
  check_level(p, levels.min);
  check_level(p, levels.max);
  if (!(levels.max >= levels.min)) throw ArgumentError("training level range is empty");

  TrainResult result{model, levels, {}};
  Vector theta = model.parameters();
  Vector m1 = Vector::Zero(theta.size());
  Vector m2 = Vector::Zero(theta.size());
  double window_sum = 0.0;
  int window_count = 0;

  for (int k = 0; k < config.steps; ++k) {
    RngStream rng(config.seed, std::uint64_t(k));
    const DenoisingBatch batch = sample_denoising_batch(data, config.batch_size, levels.min, levels.max, rng);
    const LossResult r = dsm_loss(result.model, batch, spec);
    if (!std::isfinite(r.loss) || r.loss > config.divergence_threshold) {
      std::ostringstream msg;
      msg << "training diverged at step " << k << ": loss " << r.loss << "; recent trace:";
      const std::size_t first = result.trace.size() > 5 ? result.trace.size() - 5 : 0;
      for (std::size_t i = first; i < result.trace.size(); ++i)
        msg << " [" << result.trace[i].step << ": " << result.trace[i].loss << "]";
      throw TrainingError(msg.str());
    }
    const Vector g = r.gradients.flatten();
    if (config.optimizer == OptimizerKind::adam) {
      m1 = config.beta1 * m1 + (1.0 - config.beta1) * g;
      m2 = config.beta2 * m2 + (1.0 - config.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(config.beta1, k + 1);
      const double c2 = 1.0 - std::pow(config.beta2, k + 1);
      theta.array() -= config.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + config.epsilon);
    } else {
      m1 = config.momentum * m1 + g;
      theta -= config.learning_rate * m1;
    }
    if (!theta.allFinite())
      throw TrainingError("training produced non-finite parameters at step " + std::to_string(k));
    result.model.set_parameters(theta);

    window_sum += r.loss;
    ++window_count;
    const int done = k + 1;
    if (config.trace_every > 0 && (done % config.trace_every == 0 || done == config.steps)) {
      result.trace.push_back({done, window_sum / window_count});
      window_sum = 0.0;
      window_count = 0;
    }
  }
  return result;
}

Field model_field(const MLPModel& model) {
  return {model.prediction_kind(), [model](const Matrix& states, double level) { return model.predict(states, level); }};
}

FieldErrorReport field_error(const MLPModel& model, const GaussianMixture& data, double level, Eigen::Index n,
                             std::uint64_t seed, double mass) {
  if (!(mass > 0.0 && mass <= 1.0)) throw ArgumentError("highest-density mass must lie in (0, 1]");
  const PerturbedMixture pm(data, native_param(model.prediction_kind()), level);
  const Matrix X = pm.sample(n, seed);
  const Vector logp = pm.marginal().log_density(X);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return logp(a) > logp(b); });
  const Eigen::Index keep = std::max<Eigen::Index>(1, Eigen::Index(std::floor(mass * double(n))));

  Matrix kept(X.rows(), keep);
  for (Eigen::Index i = 0; i < keep; ++i) kept.col(i) = X.col(order[std::size_t(i)]);
  const Matrix exact = pm.native_prediction(kept);
  const Matrix pred = model.predict(kept, level);
  const double den = exact.squaredNorm();
  if (!(den > 0.0)) throw DomainError("exact field vanishes on the evaluation set");
  return {level, std::sqrt((pred - exact).squaredNorm() / den), keep};
}

}  // namespace langsplit
