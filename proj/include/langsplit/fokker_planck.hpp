#pragma once

// One-dimensional finite-volume solver for
//
//   dp/dt = -d/dx [f(x, t) p] + g(t)^2 / 2 d^2p/dx^2
//
// on a uniform cell-centred grid with zero-flux (reflecting) walls, and the
// KL bookkeeping between two densities evolved by the same operator:
//
//   dKL(p||q)/dt = -g^2/2 int p (d/dx log p - d/dx log q)^2 dx.

#include "langsplit/core.hpp"

#include <functional>
#include <vector>

namespace langsplit {

class Grid1D {
 public:
  Grid1D(double x_min, double x_max, int cells);

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  int cells() const { return cells_; }
  double h() const { return (x_max_ - x_min_) / cells_; }
  double center(int i) const { return x_min_ + (i + 0.5) * h(); }
  /// Interface i sits between cells i - 1 and i; 0 and cells() are the walls.
  double interface(int i) const { return x_min_ + i * h(); }
  Vector centers() const;

 private:
  double x_min_, x_max_;
  int cells_;
};

/// Cell averages of a density. mass() = h * sum(values) is the quantity the
/// scheme conserves.
struct GridDensity {
  Grid1D grid;
  Vector values;

  double mass() const { return grid.h() * values.sum(); }
};

/// Point values at cell centres, rescaled to unit mass when `normalize`.
GridDensity density_from(const Grid1D& grid, const std::function<double(double)>& pdf, bool normalize = true);
GridDensity gaussian_density(const Grid1D& grid, double mean, double variance, bool normalize = true);

enum class FluxScheme {
  /// Scharfetter-Gummel: exact for the stationary state of locally constant
  /// drift; reduces to upwinding when g = 0 and to central differences when f = 0.
  exponential_fitting,
  /// Upwinded drift plus central diffusion.
  upwind,
};
enum class TimeScheme { explicit_euler, implicit_euler };

FluxScheme parse_flux_scheme(std::string_view name);
TimeScheme parse_time_scheme(std::string_view name);

struct FPOperator {
  std::function<double(double x, double t)> drift;
  std::function<double(double t)> diffusion;
  FluxScheme flux = FluxScheme::exponential_fitting;
};

/// f = -rate * x with constant g.
FPOperator ou_operator(double rate, double g);
/// Constant drift (possibly zero) with constant g.
FPOperator constant_operator(double drift, double g);

/// Raised when an explicit step exceeds the positivity/stability bound.
class StabilityError : public ArgumentError {
 public:
  StabilityError(const std::string& what, double required_dt) : ArgumentError(what), required_dt(required_dt) {}
  double required_dt;
};

/// Largest explicit step that keeps the update a convex combination.
double max_stable_dt(const FPOperator& op, const Grid1D& grid, double t);

GridDensity fp_step(const FPOperator& op, const GridDensity& rho, double t, double dt,
                    TimeScheme scheme = TimeScheme::explicit_euler);
GridDensity fp_solve(const FPOperator& op, GridDensity rho, double t0, double dt, int steps,
                     TimeScheme scheme = TimeScheme::explicit_euler);

/// Trapezoid estimate of KL(p || q), log values floored at 1e-300.
double grid_kl(const GridDensity& p, const GridDensity& q);

/// g(t)^2 / 2 * int p |grad log p - grad log q|^2, with log-density
/// gradients taken as central differences across cell interfaces.
double objective_rate(const FPOperator& op, const GridDensity& p, const GridDensity& q, double t);

/// The same integral with g^2/2 replaced by the numerical diffusion |f| h / 2
/// of upwinded drift: the rate at which a drift-only scheme dissipates KL.
double drift_dissipation_rate(const FPOperator& op, const GridDensity& p, const GridDensity& q, double t);

struct KLTracePoint {
  double t;
  double kl;
  double dkl_dt;      // finite differences of the KL series
  double objective;   // L_t from the formula
  double drift_dissipation;
};

struct KLTrace {
  std::vector<KLTracePoint> points;
  /// Largest p-mass found in cells where p or q sits at the 1e-300 floor.
  double max_underflow_mass = 0.0;
  bool accuracy_warning = false;  // underflow mass above 10%

  /// Trapezoid integral of drift_dissipation over the trace.
  double integrated_drift_dissipation() const;
};

/// Evolves p and q with the same operator for round(horizon / dt) steps,
/// recording every `record_every` steps. dKL/dt uses central differences
/// in the interior and second-order one-sided differences at the ends.
KLTrace kl_trace(const FPOperator& op, GridDensity p, GridDensity q, double horizon, double dt,
                 TimeScheme scheme = TimeScheme::explicit_euler, int record_every = 1);

}  // namespace langsplit
