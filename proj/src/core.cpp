#include "langsplit/core.hpp"

namespace langsplit {

std::string_view to_string(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return "vp";
    case Parameterization::ve_karras: return "ve";
    case Parameterization::rectified_flow: return "rf";
  }
  return "?";
}

std::string_view to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::score: return "score";
    case PredictionKind::noise: return "noise";
    case PredictionKind::velocity: return "velocity";
  }
  return "?";
}

std::string_view to_string(ModelType m) {
  switch (m) {
    case ModelType::vp_sde: return "vp-sde";
    case ModelType::vp_ode: return "vp-ode";
    case ModelType::ve_karras: return "ve";
    case ModelType::rectified_flow: return "rf";
  }
  return "?";
}

Parameterization parse_parameterization(std::string_view name) {
  if (name == "vp") return Parameterization::vp;
  if (name == "ve" || name == "ve-karras") return Parameterization::ve_karras;
  if (name == "rf" || name == "rectified-flow") return Parameterization::rectified_flow;
  throw ArgumentError("unknown parameterization '" + std::string(name) + "' (expected vp, ve, rf)");
}

PredictionKind parse_prediction_kind(std::string_view name) {
  if (name == "score") return PredictionKind::score;
  if (name == "noise" || name == "eps") return PredictionKind::noise;
  if (name == "velocity" || name == "v") return PredictionKind::velocity;
  throw ArgumentError("unknown prediction kind '" + std::string(name) + "' (expected score, noise, velocity)");
}

ModelType parse_model_type(std::string_view name) {
  if (name == "vp-sde") return ModelType::vp_sde;
  if (name == "vp-ode") return ModelType::vp_ode;
  if (name == "ve" || name == "ve-karras") return ModelType::ve_karras;
  if (name == "rf" || name == "rectified-flow") return ModelType::rectified_flow;
  throw ArgumentError("unknown model type '" + std::string(name) + "' (expected vp-sde, vp-ode, ve, rf)");
}

}  // namespace langsplit
