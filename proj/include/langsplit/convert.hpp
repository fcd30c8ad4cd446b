#pragma once

// Exact conversions between the VP, VE-Karras and rectified-flow
// parameterizations of the forward process, and between the score / noise /
// velocity model outputs that live in them.
//
// Every map here is affine in the state with a level-dependent coefficient, so
// each conversion is expressed as a small coefficient record that applies
// equally to a single vector or to a d x n ensemble.

#include "langsplit/core.hpp"

#include <cmath>
#include <string>

namespace langsplit {

/// state_target = state_factor * state_source; level_target = level.
template <typename Scalar>
struct PointMap {
  Scalar state_factor;
  Scalar level;
};

/// target_value = value_coef * value + state_coef * state, where `state` is
/// expressed in the parameterization of the prediction's evaluation point.
template <typename Scalar>
struct PredictionMap {
  Scalar value_coef;
  Scalar state_coef;
};

template <typename Scalar>
struct ConversionReport {
  ParamPoint<Scalar> source;
  ParamPoint<Scalar> target;
  Scalar max_abs_roundtrip_error;
};

namespace detail {

template <typename Scalar>
PointMap<Scalar> point_map_unchecked(Parameterization from, Scalar level, Parameterization to) {
  using std::sqrt;
  const Scalar one(1);
  switch (from) {
    case Parameterization::vp: {
      const Scalar a = level;
      switch (to) {
        case Parameterization::vp: return {one, a};
        // z = x / sqrt(a), sigma = sqrt((1 - a) / a)
        case Parameterization::ve_karras: return {one / sqrt(a), sqrt((one - a) / a)};
        // r = x / (sqrt(a) + sqrt(1 - a)), s = sqrt(1 - a) / (sqrt(a) + sqrt(1 - a))
        case Parameterization::rectified_flow: {
          const Scalar denom = sqrt(a) + sqrt(one - a);
          return {one / denom, sqrt(one - a) / denom};
        }
      }
      break;
    }
    case Parameterization::ve_karras: {
      const Scalar sigma = level;
      switch (to) {
        // x = z / sqrt(1 + sigma^2), a = 1 / (1 + sigma^2)
        case Parameterization::vp: return {one / sqrt(one + sigma * sigma), one / (one + sigma * sigma)};
        case Parameterization::ve_karras: return {one, sigma};
        // r = z / (1 + sigma), s = sigma / (1 + sigma)
        case Parameterization::rectified_flow: return {one / (one + sigma), sigma / (one + sigma)};
      }
      break;
    }
    case Parameterization::rectified_flow: {
      const Scalar s = level;
      switch (to) {
        // x = r / sqrt((1-s)^2 + s^2), a = (1-s)^2 / ((1-s)^2 + s^2)
        case Parameterization::vp: {
          const Scalar norm2 = (one - s) * (one - s) + s * s;
          return {one / sqrt(norm2), (one - s) * (one - s) / norm2};
        }
        // z = r / (1 - s), sigma = s / (1 - s)
        case Parameterization::ve_karras: return {one / (one - s), s / (one - s)};
        case Parameterization::rectified_flow: return {one, s};
      }
      break;
    }
  }
  return {one, level};
}

inline const char* point_formula(Parameterization from, Parameterization to) {
  if (from == to) return "identity";
  switch (from) {
    case Parameterization::vp:
      return to == Parameterization::ve_karras ? "sigma = sqrt((1 - alpha) / alpha)"
                                               : "s = sqrt(1 - alpha) / (sqrt(alpha) + sqrt(1 - alpha))";
    case Parameterization::ve_karras:
      return to == Parameterization::vp ? "alpha = 1 / (1 + sigma^2)" : "s = sigma / (1 + sigma)";
    case Parameterization::rectified_flow:
      return to == Parameterization::vp ? "alpha = (1 - s)^2 / ((1 - s)^2 + s^2)" : "sigma = s / (1 - s)";
  }
  return "?";
}

}  // namespace detail

/// Coefficients taking a point at `level` in `from` to its equivalent in `to`.
/// Throws DomainError if either level is outside its clamped domain.
template <typename Scalar>
PointMap<Scalar> point_map(Parameterization from, Scalar level, Parameterization to) {
  check_level(from, level);
  const PointMap<Scalar> m = detail::point_map_unchecked(from, level, to);
  try {
    check_level(to, m.level);
  } catch (const DomainError& e) {
    throw DomainError(std::string("conversion ") + std::string(to_string(from)) + " -> " +
                      std::string(to_string(to)) + " via '" + detail::point_formula(from, to) +
                      "' leaves the target domain: " + e.what());
  }
  return m;
}

template <typename Scalar>
ParamPoint<Scalar> convert_point(const ParamPoint<Scalar>& p, Parameterization target) {
  validate(p);
  const PointMap<Scalar> m = point_map(p.param, p.level, target);
  return {target, (p.state * m.state_factor).eval(), m.level};
}

/// Converts to `target` and back, reporting the worst component/level error.
template <typename Scalar>
ConversionReport<Scalar> roundtrip_report(const ParamPoint<Scalar>& p, Parameterization target) {
  using std::abs;
  ParamPoint<Scalar> there = convert_point(p, target);
  const ParamPoint<Scalar> back = convert_point(there, p.param);
  Scalar err = abs(back.level - p.level);
  if (p.state.size() > 0) err = std::max<Scalar>(err, (back.state - p.state).cwiseAbs().maxCoeff());
  return {p, std::move(there), err};
}

/// Coefficients converting a prediction of kind `from` evaluated at a point of
/// parameterization `at_param` and level `at_level` into kind `to`.
template <typename Scalar>
PredictionMap<Scalar> prediction_map(PredictionKind from, PredictionKind to, Parameterization at_param,
                                     Scalar at_level) {
  using std::sqrt;
  const Scalar one(1);
  if (from == to) return {one, Scalar(0)};

  const PointMap<Scalar> vp = point_map(at_param, at_level, Parameterization::vp);
  const PointMap<Scalar> ve = point_map(at_param, at_level, Parameterization::ve_karras);
  const PointMap<Scalar> rf = point_map(at_param, at_level, Parameterization::rectified_flow);
  const Scalar alpha = vp.level;
  const Scalar sigma = ve.level;
  const Scalar s = rf.level;
  // 1 - alpha without cancellation when alpha is a derived quantity near 1.
  const Scalar one_minus_alpha =
      at_param == Parameterization::vp ? one - alpha : sigma * sigma / (one + sigma * sigma);

  auto require_noise = [&](const char* formula) {
    if (!(sigma >= Scalar(limits::min_sigma)))
      throw DomainError(std::string("prediction conversion '") + formula +
                        "' divides by the noise level; need equivalent sigma >= 1e-9, got " +
                        std::to_string(double(sigma)));
  };

  switch (from) {
    case PredictionKind::score:
      if (to == PredictionKind::noise) return {-sqrt(one_minus_alpha), Scalar(0)};  // eps = -sqrt(1-a) s_x
      {
        // v = -x / sqrt(a) - (1 - a + sqrt(a (1 - a))) / sqrt(a) * s_x
        const Scalar sa = sqrt(alpha);
        return {-(one_minus_alpha + sqrt(alpha * one_minus_alpha)) / sa, -vp.state_factor / sa};
      }
    case PredictionKind::noise:
      if (to == PredictionKind::score) {
        require_noise("s_x = -sqrt(1 + sigma^2) / sigma * eps");
        return {-sqrt(one + sigma * sigma) / sigma, Scalar(0)};
      }
      return {one + sigma, -ve.state_factor};  // v = (1 + sigma) eps - z
    case PredictionKind::velocity:
      if (to == PredictionKind::noise) return {one - s, rf.state_factor};  // eps = r + (1 - s) v
      {
        // s_x = -sqrt((1-s)^2 + s^2) / s * (r + (1 - s) v)
        require_noise("s_x = -sqrt((1-s)^2 + s^2) / s * (r + (1-s) v)");
        const Scalar q = sqrt((one - s) * (one - s) + s * s) / s;
        return {-q * (one - s), -q * rf.state_factor};
      }
  }
  return {one, Scalar(0)};
}

template <typename Scalar>
Prediction<Scalar> convert_prediction(const Prediction<Scalar>& pred, PredictionKind target_kind) {
  validate(pred.at);
  if (pred.value.size() != pred.at.state.size())
    throw ArgumentError("prediction value dimension differs from its evaluation point");
  const PredictionMap<Scalar> m = prediction_map(pred.kind, target_kind, pred.at.param, pred.at.level);
  Prediction<Scalar> out;
  out.kind = target_kind;
  out.value = m.value_coef * pred.value + m.state_coef * pred.at.state;
  out.at = convert_point(pred.at, native_param(target_kind));
  return out;
}

/// Ensemble form: `values` and `states` are d x n with states in `at_param`.
template <typename Scalar>
MatrixX<Scalar> convert_prediction_values(PredictionKind from, PredictionKind to, Parameterization at_param,
                                          Scalar at_level, const MatrixX<Scalar>& values,
                                          const MatrixX<Scalar>& states) {
  const PredictionMap<Scalar> m = prediction_map(from, to, at_param, at_level);
  if (m.state_coef == Scalar(0)) return m.value_coef * values;
  return m.value_coef * values + m.state_coef * states;
}

// Relations between each parameterization's own score and its native model
// output.

/// eps(z, sigma) = -sigma * s_z(z, sigma)
template <typename Scalar, typename Derived>
auto noise_from_ve_score(const Eigen::MatrixBase<Derived>& score_z, Scalar sigma) {
  return (-sigma * score_z).eval();
}

/// v(r, s) = -(s * s_r(r, s) + r) / (1 - s)
template <typename Scalar, typename D1, typename D2>
auto velocity_from_rf_score(const Eigen::MatrixBase<D1>& score_r, const Eigen::MatrixBase<D2>& r, Scalar s) {
  return (-(s * score_r + r) / (Scalar(1) - s)).eval();
}

}  // namespace langsplit
