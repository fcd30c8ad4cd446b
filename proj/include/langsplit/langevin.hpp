#pragma once

#include "langsplit/core.hpp"
#include "langsplit/rng.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace langsplit {

/// Score of the target in its own coordinates, evaluated column-wise on a
/// d x n ensemble at a noise level.
using ScoreField = std::function<Matrix(const Matrix& states, double level)>;

/// dx = g(tau) s(x) dtau + sqrt(2 g(tau)) dW_tau with the score of a fixed
/// target (the field evaluated at `level`).
struct LangevinSpec {
  ScoreField score;
  std::function<double(double)> g;
  Parameterization param = Parameterization::vp;
  double level = 1.0;
};

/// One Euler-Maruyama step x + g s dtau + sqrt(2 g) dW.
Vector langevin_step(const LangevinSpec& spec, const Vector& x, double tau, double dtau, RngStream& rng);

struct MomentTracePoint {
  int step;
  double tau;
  Vector mean;
  Vector variance;
};

struct LangevinRun {
  Matrix states;  // d x n after the last step
  std::vector<MomentTracePoint> trace;
};

/// Runs n chains (columns of x0) for `steps` steps; chain j draws from stream
/// (seed, j). Moments are recorded every `trace_every` steps (and at the end).
LangevinRun run_langevin(const LangevinSpec& spec, const Matrix& x0, double tau0, double dtau, int steps,
                         std::uint64_t seed, int trace_every = 0, int workers = 1);

/// Drift and diffusion variance per unit dtau of one piece of a split.
struct DriftDiffusion {
  Vector drift;
  double variance_rate;
};

struct SplitCoefficients {
  DriftDiffusion forward;
  DriftDiffusion reverse;
  DriftDiffusion langevin;
};

/// Time-rescaling g(tau) of each row's Langevin dynamics: VP-SDE 1,
/// VP-ODE 1/2, VE tau, RF tau / (1 - tau).
double langevin_rate(ModelType row, double tau);

/// The Langevin clock tau a row uses at a noise level: VE and RF identify
/// tau with sigma and s; the VP rows do not depend on it.
double split_tau(ModelType row, double level);

/// Coefficients of the Langevin split at state x with score `score` (the
/// row's own-coordinate score at x) and clock tau:
///
///   row       langevin                      reverse                 forward
///   VP-SDE    s dtau + sqrt(2) dW           (x/2 + s) dtau + dW     -x/2 dtau + dW
///   VP-ODE    s/2 dtau + dW                 (x + s)/2 dtau          -x/2 dtau + dW
///   VE        tau s dtau + sqrt(2 tau) dW   tau s dtau              sqrt(2 tau) dW
///   RF        tau/(1-tau) s dtau + ...      (tau s + r)/(1-tau)     -r/(1-tau) dtau + sqrt(2tau/(1-tau)) dW
SplitCoefficients split_coefficients(ModelType row, const Vector& x, const Vector& score, double tau);

/// A forward substep followed by a reverse substep at a fixed noise level.
struct SplitStep {
  ModelType row;
  ScoreField score;
};

/// Applies the forward part (increment dW1) then the reverse part
/// (independent dW2) at fixed `level`; returns both intermediate and final
/// states.
std::pair<Vector, Vector> split_step(const SplitStep& step, const Vector& x, double level, double dtau,
                                     RngStream& rng);

/// Ensemble version; chain j uses stream (seed, j).
Matrix split_step_ensemble(const SplitStep& step, const Matrix& x, double level, double dtau, std::uint64_t seed,
                           int workers = 1);

/// The single-step Langevin spec a split row composes to at `level`.
LangevinSpec langevin_of(const SplitStep& step, Parameterization param, double level);

/// |mean| and |variance| gaps between one composed split transition from the
/// 1D point x and one Euler-Maruyama Langevin step from x. The expectation
/// over the forward increment uses Gauss-Hermite quadrature, so the result is
/// deterministic; both gaps are O(dtau^2).
struct TransitionDefect {
  double mean;
  double variance;
};
TransitionDefect split_transition_defect(const SplitStep& step, double x, double level, double dtau,
                                         int nodes = 64);

}  // namespace langsplit
