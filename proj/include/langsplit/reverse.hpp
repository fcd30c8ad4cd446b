#pragma once

// Reverse-time generation for the four rows
//
//   VP-SDE  dx = [x/2 + s(x, T - t')] dt' + dW       t  = T - t'
//   VP-ODE  dx = [x + s(x, T - t')] / 2 dt'           t  = T - t'
//   VE      dz = -eps(z, Sigma - sigma') dsigma'      sigma = Sigma - sigma'
//   RF      dr = -v(r, 1 - s') ds'                    s  = 1 - s'
//
// driven by any field (analytic oracle or trained network) of any prediction
// kind; fields of a non-native kind are converted on the fly.

#include "langsplit/core.hpp"
#include "langsplit/oracle.hpp"
#include "langsplit/rng.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace langsplit {

/// A model output as a function of (state, level), both in the native
/// coordinates of `kind` (score: VP, noise: VE, velocity: RF).
struct Field {
  PredictionKind kind = PredictionKind::score;
  std::function<Matrix(const Matrix& states, double level)> eval;
};

/// Exact field of a Gaussian-mixture data distribution.
Field oracle_field(const GaussianMixture& data, PredictionKind kind);

/// Wraps `field` so that it reports `target` predictions. Uses the same
/// conversion path reverse_step applies internally.
Field converted_field(const Field& field, PredictionKind target);

enum class Integrator { euler, heun };
enum class GridKind { uniform, karras };

Integrator parse_integrator(std::string_view name);
GridKind parse_grid_kind(std::string_view name);

class ReverseSpec {
 public:
  /// `start_clock` is the forward clock at t' = 0: T for VP, Sigma for VE,
  /// s_start for RF.
  ReverseSpec(ModelType model_type, Field field, double start_clock);

  ModelType model_type() const { return model_type_; }
  Parameterization param() const { return param_of(model_type_); }
  const Field& field() const { return field_; }
  double start_clock() const { return start_clock_; }

  /// Constant of the clock map clock = C - t': T, Sigma, or 1.
  double clock_offset() const;
  /// Reverse time at which generation starts (0, or 1 - s_start for RF) and ends.
  double reverse_start() const { return clock_offset() - start_clock_; }
  double reverse_end() const { return clock_offset(); }

  double clock_at(double t_rev) const { return clock_offset() - t_rev; }
  double level_at(double t_rev) const;

  /// The row's native prediction (score / noise / velocity) at `level` for
  /// states in the row's coordinates.
  Matrix native_prediction(const Matrix& states, double level) const;
  /// dx/dt' without the noise term.
  Matrix drift(const Matrix& states, double t_rev) const;
  bool stochastic() const { return model_type_ == ModelType::vp_sde; }

  /// Standard deviation of the initial noise ensemble.
  double initial_noise_std() const;

 private:
  ModelType model_type_;
  Field field_;
  double start_clock_;
};

/// Default start clocks: VP T with alpha_T = 1e-4; VE Sigma = 20 * data
/// std bound; RF s = 1 - 1e-3.
double default_start_clock(ModelType model_type, double data_std_bound);

/// One Euler (ODE rows, optionally Heun) or Euler-Maruyama (VP-SDE) step from
/// t_rev to t_rev + dt_rev.
Vector reverse_step(const ReverseSpec& spec, const Vector& x, double t_rev, double dt_rev, RngStream& rng,
                    Integrator integrator = Integrator::euler);

/// Reverse times t'_0 = reverse_start() < ... < t'_steps = reverse_end().
/// Karras spacing is polynomial in the equivalent sigma with exponent rho,
/// mapped to the row's clock and ending at zero noise.
std::vector<double> reverse_time_grid(const ReverseSpec& spec, int steps, GridKind kind = GridKind::uniform,
                                      double rho = 7.0, double sigma_min = 2e-3);

struct GenerateOptions {
  Eigen::Index dim = 1;
  Eigen::Index n_chains = 1000;
  int steps = 400;
  std::uint64_t seed = 0;
  GridKind grid = GridKind::uniform;
  double karras_rho = 7.0;
  Integrator integrator = Integrator::euler;
  std::vector<int> checkpoints;  // grid indices whose ensembles are kept
  int workers = 1;
};

struct EnsembleSnapshot {
  int step;
  double t_rev;
  double level;
  Matrix states;
};

struct GenerateResult {
  std::vector<double> grid;
  Matrix states;  // terminal ensemble, d x n
  std::vector<EnsembleSnapshot> snapshots;
};

/// Chain j draws its initial noise and all increments from stream (seed, j),
/// so the output does not depend on `workers`.
GenerateResult generate(const ReverseSpec& spec, const GenerateOptions& options);

struct DualityRow {
  int step;
  double t_rev;
  double level;
  Vector mean, exact_mean, se_mean;
  Vector variance, exact_variance, se_variance;
  double mean_allowance;      // 4 SE + bias allowance, worst coordinate
  double variance_allowance;
  double max_mean_error;
  double max_variance_error;
  bool pass;
};

struct DualityReport {
  ModelType model_type;
  std::vector<DualityRow> rows;
  bool pass;
  /// Largest |ensemble - exact| over checkpoints as a multiple of its allowance.
  double worst_ratio;
  Matrix terminal;  // generated ensemble at zero noise
};

struct DualityOptions {
  Eigen::Index n_chains = 100000;
  int steps = 400;
  int checkpoints = 5;
  std::uint64_t seed = 1;
  Integrator integrator = Integrator::euler;
  GridKind grid = GridKind::karras;
  double start_clock = 0.0;  // 0 selects default_start_clock
  int workers = 1;
};

/// Runs the reverse process with the analytic field and compares ensemble
/// mean and variance at evenly spaced checkpoints with the perturbed mixture
/// at the matching forward level.
///
/// Allowance per checkpoint and coordinate: 4 standard errors, plus a
/// discretization allowance of kDualityBiasPerStep / steps times the data
/// scale (relative variance error, or mean error in standard deviations),
/// plus the exact mismatch between the initial noise and the true forward
/// marginal at the start level (carried as a relative variance error for VE,
/// whose flow preserves it).
DualityReport duality_check(const GaussianMixture& data, ModelType model_type, const DualityOptions& options);

/// Discretization allowance of duality_check: relative moment bias times the
/// step count. On the Karras grid the largest bias measured over VP/VE/RF and
/// data standard deviations 0.1 to 0.5 was 16 / steps (VP-ODE, narrowest data).
inline constexpr double kDualityBiasPerStep = 20.0;

}  // namespace langsplit
