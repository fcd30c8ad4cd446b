#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace langsplit {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Thrown when a noise level (or derived quantity) leaves the domain where a
/// closed-form expression is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Thrown for malformed arguments: bad step sizes, empty vectors, shape
/// mismatches, non-monotone grids.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Parameterization { vp, ve_karras, rectified_flow };

/// What a model output encodes. Each kind lives in its own coordinates:
/// score in VP (x_t, alpha_t), noise in VE (z_sigma, sigma), velocity in RF
/// (r_s, s).
enum class PredictionKind { score, noise, velocity };

/// The four reverse processes, which are also the rows of the Langevin split.
enum class ModelType { vp_sde, vp_ode, ve_karras, rectified_flow };

namespace limits {
/// RF levels are restricted to s <= 1 - rf_level_margin.
inline constexpr double rf_level_margin = 1e-6;
/// Smallest VE-equivalent sigma at which noise -> score divides by sigma.
inline constexpr double min_sigma = 1e-9;
/// RF forward SDE integration stops at s = 1 - rf_sde_margin (drift -r/(1-s)).
inline constexpr double rf_sde_margin = 1e-3;
}  // namespace limits

std::string_view to_string(Parameterization p);
std::string_view to_string(PredictionKind k);
std::string_view to_string(ModelType m);
Parameterization parse_parameterization(std::string_view name);
PredictionKind parse_prediction_kind(std::string_view name);
ModelType parse_model_type(std::string_view name);

constexpr PredictionKind native_kind(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return PredictionKind::score;
    case Parameterization::ve_karras: return PredictionKind::noise;
    case Parameterization::rectified_flow: return PredictionKind::velocity;
  }
  return PredictionKind::score;
}

constexpr Parameterization native_param(PredictionKind k) {
  switch (k) {
    case PredictionKind::score: return Parameterization::vp;
    case PredictionKind::noise: return Parameterization::ve_karras;
    case PredictionKind::velocity: return Parameterization::rectified_flow;
  }
  return Parameterization::vp;
}

constexpr Parameterization param_of(ModelType m) {
  switch (m) {
    case ModelType::vp_sde:
    case ModelType::vp_ode: return Parameterization::vp;
    case ModelType::ve_karras: return Parameterization::ve_karras;
    case ModelType::rectified_flow: return Parameterization::rectified_flow;
  }
  return Parameterization::vp;
}

/// A state in one forward-process parameterization together with its noise
/// level in that parameterization's native variable (alpha_t, sigma or s).
template <typename Scalar>
struct ParamPoint {
  Parameterization param = Parameterization::vp;
  VectorX<Scalar> state;
  Scalar level = Scalar(1);

  Eigen::Index dim() const { return state.size(); }
};

template <typename Scalar>
struct Prediction {
  PredictionKind kind = PredictionKind::score;
  VectorX<Scalar> value;
  ParamPoint<Scalar> at;
};

using ParamPointd = ParamPoint<double>;
using Predictiond = Prediction<double>;

/// Throws DomainError if `level` is outside the valid (clamped) domain of `p`.
template <typename Scalar>
void check_level(Parameterization p, Scalar level) {
  using std::isfinite;
  if (!isfinite(level)) throw DomainError("noise level is not finite");
  switch (p) {
    case Parameterization::vp:
      if (!(level > Scalar(0) && level <= Scalar(1)))
        throw DomainError("VP level alpha_t must lie in (0, 1], got " + std::to_string(double(level)));
      break;
    case Parameterization::ve_karras:
      if (!(level >= Scalar(0)))
        throw DomainError("VE level sigma must be >= 0, got " + std::to_string(double(level)));
      break;
    case Parameterization::rectified_flow:
      if (!(level >= Scalar(0) && level <= Scalar(1.0 - limits::rf_level_margin)))
        throw DomainError("RF level s must lie in [0, 1 - 1e-6] (formulas divide by 1 - s), got " +
                          std::to_string(double(level)));
      break;
  }
}

template <typename Scalar>
void validate(const ParamPoint<Scalar>& p) {
  if (p.state.size() < 1) throw ArgumentError("state must have dimension >= 1");
  if (!p.state.allFinite()) throw ArgumentError("state has non-finite components");
  check_level(p.param, p.level);
}

/// VE-equivalent sigma of a level, the common yardstick for "how much noise".
template <typename Scalar>
Scalar equivalent_sigma(Parameterization p, Scalar level) {
  using std::sqrt;
  switch (p) {
    case Parameterization::vp: return sqrt((Scalar(1) - level) / level);
    case Parameterization::ve_karras: return level;
    case Parameterization::rectified_flow: return level / (Scalar(1) - level);
  }
  return level;
}

/// Zero-noise level of each parameterization.
constexpr double clean_level(Parameterization p) { return p == Parameterization::vp ? 1.0 : 0.0; }

// VP clock: alpha_t = exp(-t).
inline double vp_alpha_from_time(double t) { return std::exp(-t); }
inline double vp_time_from_alpha(double alpha) { return -std::log(alpha); }

}  // namespace langsplit
