#include "langsplit/forward.hpp"

#include "langsplit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace langsplit {

double ForwardSpec::clock_from_level(double level) const {
  check_level(param_, level);
  return param_ == Parameterization::vp ? vp_time_from_alpha(level) : level;
}

double ForwardSpec::level_from_clock(double clock) const {
  return param_ == Parameterization::vp ? vp_alpha_from_time(clock) : clock;
}

double ForwardSpec::drift_rate(double clock) const {
  switch (param_) {
    case Parameterization::vp: return -0.5;
    case Parameterization::ve_karras: return 0.0;
    case Parameterization::rectified_flow: return -1.0 / (1.0 - clock);
  }
  return 0.0;
}

double ForwardSpec::diffusion(double clock) const {
  switch (param_) {
    case Parameterization::vp: return 1.0;
    case Parameterization::ve_karras: return std::sqrt(2.0 * std::max(clock, 0.0));
    case Parameterization::rectified_flow: return std::sqrt(2.0 * std::max(clock, 0.0) / (1.0 - clock));
  }
  return 0.0;
}

MarginalCoefficients ForwardSpec::marginal(double level) const {
  check_level(param_, level);
  switch (param_) {
    case Parameterization::vp: return {std::sqrt(level), std::sqrt(1.0 - level)};
    case Parameterization::ve_karras: return {1.0, level};
    case Parameterization::rectified_flow: return {1.0 - level, level};
  }
  return {1.0, 0.0};
}

double ForwardSpec::max_clock() const {
  return param_ == Parameterization::rectified_flow ? 1.0 - limits::rf_sde_margin
                                                    : std::numeric_limits<double>::infinity();
}

std::vector<double> uniform_clock_grid(double clock_end, int steps) {
  if (steps < 0) throw ArgumentError("grid needs a nonnegative step count");
  std::vector<double> grid(steps + 1);
  for (int k = 0; k <= steps; ++k) grid[k] = steps == 0 ? 0.0 : clock_end * double(k) / double(steps);
  return grid;
}

std::vector<double> uniform_level_grid(const ForwardSpec& spec, double level_end, int steps) {
  if (steps < 0) throw ArgumentError("grid needs a nonnegative step count");
  const double start = clean_level(spec.param());
  std::vector<double> grid(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    const double level = steps == 0 ? start : start + (level_end - start) * double(k) / double(steps);
    grid[k] = k == 0 ? 0.0 : spec.clock_from_level(level);
  }
  return grid;
}

void check_clock_grid(const ForwardSpec& spec, const std::vector<double>& clocks) {
  if (clocks.empty()) return;
  if (clocks.front() != 0.0) throw ArgumentError("forward grid must start at the zero-noise clock 0");
  for (std::size_t k = 1; k < clocks.size(); ++k)
    if (!(clocks[k] > clocks[k - 1]))
      throw ArgumentError("forward grid is not strictly increasing at index " + std::to_string(k));
  if (clocks.back() > spec.max_clock())
    throw DomainError("RF forward SDE grid enters the clamp s > 1 - 1e-3 where the drift -r/(1-s) is too stiff");
}

ParamPointd sample_closed_form(const ForwardSpec& spec, const Vector& x0, double level, RngStream& rng) {
  if (x0.size() < 1 || !x0.allFinite()) throw ArgumentError("x0 must be a finite vector of dimension >= 1");
  const MarginalCoefficients m = spec.marginal(level);
  Vector x = m.scale * x0;
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += m.noise_std * rng.normal();
  return {spec.param(), std::move(x), level};
}

Matrix sample_closed_form_ensemble(const ForwardSpec& spec, const Vector& x0, double level, Eigen::Index n,
                                   std::uint64_t seed) {
  if (x0.size() < 1 || !x0.allFinite()) throw ArgumentError("x0 must be a finite vector of dimension >= 1");
  const MarginalCoefficients m = spec.marginal(level);
  Matrix out(x0.size(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    RngStream rng(seed, std::uint64_t(j));
    for (Eigen::Index i = 0; i < x0.size(); ++i) out(i, j) = m.scale * x0(i) + m.noise_std * rng.normal();
  }
  return out;
}

std::vector<ParamPointd> integrate_forward_sde(const ForwardSpec& spec, const Vector& x0,
                                               const std::vector<double>& clocks, RngStream& rng) {
  if (x0.size() < 1 || !x0.allFinite()) throw ArgumentError("x0 must be a finite vector of dimension >= 1");
  check_clock_grid(spec, clocks);
  std::vector<ParamPointd> traj;
  traj.push_back({spec.param(), x0, clean_level(spec.param())});
  Vector x = x0;
  for (std::size_t k = 0; k + 1 < clocks.size(); ++k) {
    const double h = clocks[k + 1] - clocks[k];
    const double a = spec.drift_rate(clocks[k]);
    const double g = spec.diffusion(clocks[k]) * std::sqrt(h);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += a * x(i) * h + g * rng.normal();
    traj.push_back({spec.param(), x, spec.level_from_clock(clocks[k + 1])});
  }
  return traj;
}

ForwardEnsemble simulate_forward(const ForwardSpec& spec, const Vector& x0, Eigen::Index n_chains,
                                 const std::vector<double>& clocks, const std::vector<int>& record,
                                 std::uint64_t seed, int workers) {
  if (x0.size() < 1 || !x0.allFinite()) throw ArgumentError("x0 must be a finite vector of dimension >= 1");
  if (n_chains < 1) throw ArgumentError("need at least one chain");
  if (clocks.empty()) throw ArgumentError("forward grid is empty");
  check_clock_grid(spec, clocks);

  ForwardEnsemble out;
  out.grid_indices = record.empty() ? std::vector<int>{int(clocks.size()) - 1} : record;
  std::sort(out.grid_indices.begin(), out.grid_indices.end());
  for (int idx : out.grid_indices) {
    if (idx < 0 || idx >= int(clocks.size())) throw ArgumentError("record index outside the grid");
    out.levels.push_back(idx == 0 ? clean_level(spec.param()) : spec.level_from_clock(clocks[idx]));
    out.states.emplace_back(x0.size(), n_chains);
  }

  const Eigen::Index d = x0.size();
  const std::size_t steps = clocks.size() - 1;
  std::vector<double> rate(steps), noise_scale(steps), h(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    h[k] = clocks[k + 1] - clocks[k];
    rate[k] = spec.drift_rate(clocks[k]);
    noise_scale[k] = spec.diffusion(clocks[k]) * std::sqrt(h[k]);
  }

  parallel_for_blocks(n_chains, workers, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    Vector x(d);
    for (std::ptrdiff_t j = begin; j < end; ++j) {
      RngStream rng(seed, std::uint64_t(j));
      x = x0;
      std::size_t next = 0;
      while (next < out.grid_indices.size() && out.grid_indices[next] == 0) out.states[next++].col(j) = x;
      for (std::size_t k = 0; k < steps; ++k) {
        for (Eigen::Index i = 0; i < d; ++i) x(i) += rate[k] * x(i) * h[k] + noise_scale[k] * rng.normal();
        while (next < out.grid_indices.size() && out.grid_indices[next] == int(k + 1))
          out.states[next++].col(j) = x;
      }
    }
  });
  return out;
}

SchemeMoments euler_maruyama_moments(const ForwardSpec& spec, const std::vector<double>& clocks) {
  check_clock_grid(spec, clocks);
  SchemeMoments m;
  double mean = 1.0, var = 0.0;
  m.mean_factor.push_back(mean);
  m.variance.push_back(var);
  for (std::size_t k = 0; k + 1 < clocks.size(); ++k) {
    const double h = clocks[k + 1] - clocks[k];
    const double growth = 1.0 + spec.drift_rate(clocks[k]) * h;
    const double g = spec.diffusion(clocks[k]);
    mean *= growth;
    var = growth * growth * var + g * g * h;
    m.mean_factor.push_back(mean);
    m.variance.push_back(var);
  }
  return m;
}

}  // namespace langsplit
