#pragma once

#include "langsplit/core.hpp"
#include "langsplit/rng.hpp"

#include <cstdint>
#include <vector>

namespace langsplit {

/// x_level = scale * x_0 + noise_std * eps
struct MarginalCoefficients {
  double scale;
  double noise_std;
};

/// Forward SDE dx = f(x, c) dc + g(c) dW_c of one parameterization.
///
/// The SDE clock c is the native level for VE (sigma) and RF (s); VP runs on
/// t = -ln(alpha_t). This class is the single place where clocks and levels
/// are converted into each other.
///
///   VP:  dx = -x/2 dt + dW_t
///   VE:  dz = sqrt(2 sigma) dW_sigma
///   RF:  dr = -r / (1 - s) ds + sqrt(2 s / (1 - s)) dW_s
class ForwardSpec {
 public:
  explicit ForwardSpec(Parameterization param) : param_(param) {}

  Parameterization param() const { return param_; }

  double clock_from_level(double level) const;
  double level_from_clock(double clock) const;

  /// Drifts are linear: f(x, c) = drift_rate(c) * x.
  double drift_rate(double clock) const;
  Vector drift(const Vector& x, double clock) const { return drift_rate(clock) * x; }
  double diffusion(double clock) const;

  MarginalCoefficients marginal(double level) const;

  /// Largest clock the SDE may be integrated to (RF stops short of s = 1).
  double max_clock() const;

 private:
  Parameterization param_;
};

/// Clocks 0 = c_0 < c_1 < ... < c_steps = clock_end, uniform in the clock.
std::vector<double> uniform_clock_grid(double clock_end, int steps);

/// Clocks for a grid that is uniform in the native level variable, starting
/// at zero noise (alpha = 1 for VP) and ending at `level_end`.
std::vector<double> uniform_level_grid(const ForwardSpec& spec, double level_end, int steps);

/// Throws if the grid does not start at 0, is not strictly increasing, or
/// enters the RF integration clamp.
void check_clock_grid(const ForwardSpec& spec, const std::vector<double>& clocks);

ParamPointd sample_closed_form(const ForwardSpec& spec, const Vector& x0, double level, RngStream& rng);

/// n samples of the closed-form marginal from one starting point; chain j uses
/// stream (seed, j).
Matrix sample_closed_form_ensemble(const ForwardSpec& spec, const Vector& x0, double level, Eigen::Index n,
                                   std::uint64_t seed);

/// Single Euler-Maruyama trajectory over the clock grid. An empty or
/// one-point grid returns just the starting point.
std::vector<ParamPointd> integrate_forward_sde(const ForwardSpec& spec, const Vector& x0,
                                               const std::vector<double>& clocks, RngStream& rng);

struct ForwardEnsemble {
  std::vector<int> grid_indices;  // which clock-grid points were recorded
  std::vector<double> levels;
  std::vector<Matrix> states;     // d x n per recorded point
};

/// Euler-Maruyama on n independent chains, chain j on stream (seed, j).
/// Results do not depend on `workers`.
ForwardEnsemble simulate_forward(const ForwardSpec& spec, const Vector& x0, Eigen::Index n_chains,
                                 const std::vector<double>& clocks, const std::vector<int>& record,
                                 std::uint64_t seed, int workers = 1);

/// Exact mean factor and per-component variance of the Euler-Maruyama chain
/// (not of the SDE) at every grid point. For these linear SDEs the scheme's
/// moments obey m_{k+1} = (1 + a_k h) m_k, v_{k+1} = (1 + a_k h)^2 v_k + g_k^2 h,
/// which gives the exact discretization bias against the closed form.
struct SchemeMoments {
  std::vector<double> mean_factor;
  std::vector<double> variance;
};
SchemeMoments euler_maruyama_moments(const ForwardSpec& spec, const std::vector<double>& clocks);

}  // namespace langsplit
