#pragma once

// Denoising score-matching losses for the three parameterizations
//
//   VP   1/2       || -eps / sqrt(1 - alpha) - s_theta(x, alpha) ||^2
//   VE   1/sigma   || eps_theta(z, sigma) - eps ||^2
//   RF   (1-s)/s   || eps - r_0 - v_theta(r, s) ||^2
//
// with explicit backpropagation through MLPModel, the marginal
// score-matching loss against the analytic oracle, and a small Adam / SGD
// training loop.

#include "langsplit/core.hpp"
#include "langsplit/mlp.hpp"
#include "langsplit/oracle.hpp"
#include "langsplit/reverse.hpp"
#include "langsplit/rng.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace langsplit {

/// grad log p(x_level | x_0) = -eps / b, b the marginal noise std of the
/// row's parameterization. Throws DomainError at zero noise and outside the
/// clamped domain.
Vector conditional_score_target(ModelType model_type, const Vector& x0, const Vector& noise, double level);

enum class WeightMode { paper, uniform, custom };

std::string_view to_string(WeightMode m);
WeightMode parse_weight_mode(std::string_view name);

struct LossSpec {
  ModelType model_type = ModelType::vp_sde;
  WeightMode weight_mode = WeightMode::paper;
  /// Used when weight_mode == custom; level is in the row's parameterization.
  std::function<double(double level)> custom_weight;
  /// Label stored in checkpoints for a custom weight.
  std::string custom_name;
};

/// Loss weight at `level`: 1/2, 1/sigma or (1-s)/s in paper mode, 1 in
/// uniform mode.
double loss_weight(const LossSpec& spec, double level);

/// Named custom weights accepted by configs: "sigma2" is the equivalent
/// sigma^2 / (1 + sigma^2), i.e. 1 - alpha in VP.
LossSpec custom_loss(ModelType model_type, const std::string& name);

/// Columns are samples; levels are in the row's parameterization.
struct DenoisingBatch {
  Matrix x0;
  Matrix noise;
  Vector levels;
};

/// The first uniform draw of each column picks the level, then x0, then the
/// noise, all from `rng`.
DenoisingBatch sample_denoising_batch(const GaussianMixture& data, Eigen::Index n, double level_min,
                                      double level_max, RngStream& rng);
/// Column j draws x0 and the noise from stream (seed, j).
DenoisingBatch fixed_level_batch(const GaussianMixture& data, double level, Eigen::Index n, std::uint64_t seed);

/// Raised on non-finite model outputs or a diverging training loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossResult {
  double loss = 0.0;
  Gradients gradients;  // empty when not requested
};

/// Mean weighted squared error between the row's regression target and the
/// model's prediction converted to the row's native kind. A model of another
/// kind is evaluated at the converted point and its output converted back.
LossResult dsm_loss(const MLPModel& model, const DenoisingBatch& batch, const LossSpec& spec,
                    bool with_gradients = true);

/// Marginal score-matching loss: the oracle's native prediction at samples of
/// pm replaces the conditional target. pm must use the row's parameterization.
double sm_loss_oracle(const MLPModel& model, const PerturbedMixture& pm, const Matrix& samples,
                      const LossSpec& spec);
double sm_loss_oracle(const MLPModel& model, const PerturbedMixture& pm, Eigen::Index n_samples,
                      std::uint64_t seed, const LossSpec& spec);

struct LevelRange {
  double min;
  double max;
};

/// Training level range in the row's parameterization: VP alpha in
/// [1e-4, 1 - 1e-3], VE sigma in [2e-3, sigma_max], RF s in [1e-3, 1 - 1e-3].
LevelRange default_level_range(ModelType model_type, double sigma_max);

enum class OptimizerKind { adam, sgd_momentum };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 2e-3;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int steps = 20000;
  Eigen::Index batch_size = 1024;
  std::uint64_t seed = 0;
  LevelRange levels{0.0, 0.0};  // min == max == 0 selects default_level_range
  int trace_every = 100;
  double divergence_threshold = 1e6;
};

struct LossTracePoint {
  int step;
  double loss;  // mean batch loss since the previous trace point
};

struct TrainResult {
  MLPModel model;
  LevelRange levels;
  std::vector<LossTracePoint> trace;
};

/// Batch k is drawn from stream (seed, k). Single-threaded, so the result is
/// fully determined by the inputs.
TrainResult train(MLPModel model, const GaussianMixture& data, const LossSpec& spec, const TrainConfig& config);

/// The model as a reverse-process field.
Field model_field(const MLPModel& model);

struct FieldErrorReport {
  double level;          // in the model's native parameterization
  double relative_l2;    // sqrt(sum |pred - exact|^2 / sum |exact|^2)
  Eigen::Index n_used;
};

/// Relative L2 error of the model's output against the oracle's prediction of
/// the same kind, over the `mass` highest-density fraction of n samples drawn
/// from the perturbed data at `level`.
FieldErrorReport field_error(const MLPModel& model, const GaussianMixture& data, double level, Eigen::Index n,
                             std::uint64_t seed, double mass = 0.9);

}  // namespace langsplit
