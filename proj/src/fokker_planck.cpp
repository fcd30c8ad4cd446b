#include "langsplit/fokker_planck.hpp"

#include "langsplit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace langsplit {

namespace {

constexpr double kLogFloor = 1e-300;

// Bernoulli function z / (e^z - 1), with its series near 0.
double bernoulli(double z) {
  if (std::abs(z) < 1e-6) return 1.0 - 0.5 * z + z * z / 12.0;
  if (z > 700.0) return z * std::exp(-z);
  return z / std::expm1(z);
}

// Interface flux J = a * p_left - b * p_right with a, b >= 0.
struct FluxCoefficients {
  Vector a;  // indexed by interior interface 1..cells-1 (entry 0 unused)
  Vector b;
};

FluxCoefficients flux_coefficients(const FPOperator& op, const Grid1D& grid, double t) {
  const int n = grid.cells();
  const double h = grid.h();
  const double g = op.diffusion(t);
  if (!std::isfinite(g) || g < 0.0) throw ArgumentError("diffusion g(t) must be finite and >= 0");
  const double D = 0.5 * g * g;
  FluxCoefficients c{Vector::Zero(n + 1), Vector::Zero(n + 1)};
  for (int i = 1; i < n; ++i) {
    const double f = op.drift(grid.interface(i), t);
    if (!std::isfinite(f)) throw ArgumentError("drift is not finite on the grid");
    if (op.flux == FluxScheme::upwind || D == 0.0) {
      c.a(i) = std::max(f, 0.0) + D / h;
      c.b(i) = -std::min(f, 0.0) + D / h;
    } else {
      const double peclet = f * h / D;
      c.a(i) = D / h * bernoulli(-peclet);
      c.b(i) = D / h * bernoulli(peclet);
    }
  }
  return c;
}

void check_density(const GridDensity& rho) {
  if (rho.values.size() != rho.grid.cells()) throw ArgumentError("density does not match its grid");
  if (!rho.values.allFinite() || rho.values.minCoeff() < 0.0)
    throw ArgumentError("density values must be finite and nonnegative");
}

Vector log_floored(const Vector& v) { return v.cwiseMax(kLogFloor).array().log().matrix(); }

// sum over interior interfaces of h * w_i * pbar * (d/dx log(p/q))^2
double weighted_fisher(const GridDensity& p, const GridDensity& q, const Vector& interface_weight) {
  const int n = p.grid.cells();
  const double h = p.grid.h();
  const Vector u = log_floored(p.values) - log_floored(q.values);
  double sum = 0.0;
  for (int i = 1; i < n; ++i) {
    const double du = (u(i) - u(i - 1)) / h;
    const double pbar = 0.5 * (p.values(i) + p.values(i - 1));
    sum += h * interface_weight(i) * pbar * du * du;
  }
  return sum;
}

}  // namespace

Grid1D::Grid1D(double x_min, double x_max, int cells) : x_min_(x_min), x_max_(x_max), cells_(cells) {
  if (!(x_max > x_min) || !std::isfinite(x_min) || !std::isfinite(x_max))
    throw ArgumentError("grid needs finite x_min < x_max");
  if (cells < 3) throw ArgumentError("grid needs at least 3 cells");
}

Vector Grid1D::centers() const {
  Vector c(cells_);
  for (int i = 0; i < cells_; ++i) c(i) = center(i);
  return c;
}

GridDensity density_from(const Grid1D& grid, const std::function<double(double)>& pdf, bool normalize) {
  GridDensity rho{grid, Vector(grid.cells())};
  for (int i = 0; i < grid.cells(); ++i) rho.values(i) = pdf(grid.center(i));
  check_density(rho);
  if (normalize) {
    const double m = rho.mass();
    if (!(m > 0.0)) throw ArgumentError("density has zero mass on the grid");
    rho.values /= m;
  }
  return rho;
}

GridDensity gaussian_density(const Grid1D& grid, double mean, double variance, bool normalize) {
  if (!(variance > 0.0)) throw ArgumentError("Gaussian variance must be positive");
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * variance);
  return density_from(
      grid, [&](double x) { return norm * std::exp(-0.5 * (x - mean) * (x - mean) / variance); }, normalize);
}

FluxScheme parse_flux_scheme(std::string_view name) {
  if (name == "exponential-fitting" || name == "sg") return FluxScheme::exponential_fitting;
  if (name == "upwind") return FluxScheme::upwind;
  throw ArgumentError("unknown flux scheme '" + std::string(name) + "'");
}

TimeScheme parse_time_scheme(std::string_view name) {
  if (name == "explicit") return TimeScheme::explicit_euler;
  if (name == "implicit" || name == "semi-implicit") return TimeScheme::implicit_euler;
  throw ArgumentError("unknown time scheme '" + std::string(name) + "'");
}

FPOperator ou_operator(double rate, double g) {
  return {[rate](double x, double) { return -rate * x; }, [g](double) { return g; }};
}

FPOperator constant_operator(double drift, double g) {
  return {[drift](double, double) { return drift; }, [g](double) { return g; }};
}

double max_stable_dt(const FPOperator& op, const Grid1D& grid, double t) {
  const FluxCoefficients c = flux_coefficients(op, grid, t);
  double outflow = 0.0;
  for (int i = 0; i < grid.cells(); ++i) outflow = std::max(outflow, c.a(i + 1) + c.b(i));
  return outflow > 0.0 ? grid.h() / outflow : std::numeric_limits<double>::infinity();
}

GridDensity fp_step(const FPOperator& op, const GridDensity& rho, double t, double dt, TimeScheme scheme) {
  check_density(rho);
  if (!(dt > 0.0)) throw ArgumentError("Fokker-Planck step needs dt > 0");
  const Grid1D& grid = rho.grid;
  const int n = grid.cells();
  const double r = dt / grid.h();
  const Vector& p = rho.values;
  GridDensity out{grid, Vector(n)};

  if (scheme == TimeScheme::explicit_euler) {
    const double limit = max_stable_dt(op, grid, t);
    if (dt > limit) {
      std::ostringstream msg;
      msg << "explicit Fokker-Planck step dt = " << dt << " exceeds the stability bound; need dt <= " << limit;
      throw StabilityError(msg.str(), limit);
    }
    const FluxCoefficients c = flux_coefficients(op, grid, t);
    Vector flux = Vector::Zero(n + 1);
    for (int i = 1; i < n; ++i) flux(i) = c.a(i) * p(i - 1) - c.b(i) * p(i);
    for (int i = 0; i < n; ++i) out.values(i) = p(i) - r * (flux(i + 1) - flux(i));
    return out;
  }

  // Backward Euler: (I + r K) p_new = p with K the flux-divergence matrix at t + dt.
  const FluxCoefficients c = flux_coefficients(op, grid, t + dt);
  Vector lower(n), diag(n), upper(n);
  for (int i = 0; i < n; ++i) {
    diag(i) = 1.0 + r * (c.a(i + 1) + c.b(i));
    lower(i) = i > 0 ? -r * c.a(i) : 0.0;
    upper(i) = i + 1 < n ? -r * c.b(i + 1) : 0.0;
  }
  // Thomas algorithm; the matrix is an M-matrix, so no pivoting is needed.
  Vector cp(n), dp(n);
  cp(0) = upper(0) / diag(0);
  dp(0) = p(0) / diag(0);
  for (int i = 1; i < n; ++i) {
    const double m = diag(i) - lower(i) * cp(i - 1);
    cp(i) = upper(i) / m;
    dp(i) = (p(i) - lower(i) * dp(i - 1)) / m;
  }
  out.values(n - 1) = dp(n - 1);
  for (int i = n - 2; i >= 0; --i) out.values(i) = dp(i) - cp(i) * out.values(i + 1);
  return out;
}

GridDensity fp_solve(const FPOperator& op, GridDensity rho, double t0, double dt, int steps, TimeScheme scheme) {
  if (steps < 0) throw ArgumentError("step count must be >= 0");
  for (int k = 0; k < steps; ++k) rho = fp_step(op, rho, t0 + k * dt, dt, scheme);
  return rho;
}

double grid_kl(const GridDensity& p, const GridDensity& q) {
  check_density(p);
  check_density(q);
  if (p.grid.cells() != q.grid.cells()) throw ArgumentError("KL needs densities on the same grid");
  const Vector integrand = p.values.cwiseProduct(log_floored(p.values) - log_floored(q.values));
  return trapezoid(integrand, p.grid.h());
}

double objective_rate(const FPOperator& op, const GridDensity& p, const GridDensity& q, double t) {
  const double g = op.diffusion(t);
  return weighted_fisher(p, q, Vector::Constant(p.grid.cells() + 1, 0.5 * g * g));
}

double drift_dissipation_rate(const FPOperator& op, const GridDensity& p, const GridDensity& q, double t) {
  const int n = p.grid.cells();
  Vector w = Vector::Zero(n + 1);
  for (int i = 1; i < n; ++i) w(i) = 0.5 * std::abs(op.drift(p.grid.interface(i), t)) * p.grid.h();
  return weighted_fisher(p, q, w);
}

double KLTrace::integrated_drift_dissipation() const {
  double sum = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    sum += 0.5 * (points[i].drift_dissipation + points[i - 1].drift_dissipation) * (points[i].t - points[i - 1].t);
  return sum;
}

KLTrace kl_trace(const FPOperator& op, GridDensity p, GridDensity q, double horizon, double dt, TimeScheme scheme,
                 int record_every) {
  if (!(horizon > 0.0) || !(dt > 0.0)) throw ArgumentError("KL trace needs horizon > 0 and dt > 0");
  if (record_every < 1) throw ArgumentError("record_every must be >= 1");
  const int steps = int(std::lround(horizon / dt));
  if (steps < 2 * record_every) throw ArgumentError("KL trace needs at least two recorded intervals");

  KLTrace trace;
  auto record = [&](double t) {
    double underflow = 0.0;
    for (int i = 0; i < p.grid.cells(); ++i)
      if (p.values(i) <= kLogFloor || q.values(i) <= kLogFloor) underflow += p.values(i);
    trace.max_underflow_mass = std::max(trace.max_underflow_mass, underflow * p.grid.h());
    trace.points.push_back({t, grid_kl(p, q), 0.0, objective_rate(op, p, q, t), drift_dissipation_rate(op, p, q, t)});
  };
  record(0.0);
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    p = fp_step(op, p, t, dt, scheme);
    q = fp_step(op, q, t, dt, scheme);
    if ((k + 1) % record_every == 0) record((k + 1) * dt);
  }
  trace.accuracy_warning = trace.max_underflow_mass > 0.1;

  auto& pts = trace.points;
  const std::size_t m = pts.size();
  const double step = record_every * dt;
  for (std::size_t i = 1; i + 1 < m; ++i) pts[i].dkl_dt = (pts[i + 1].kl - pts[i - 1].kl) / (2.0 * step);
  if (m >= 3) {
    pts[0].dkl_dt = (-3.0 * pts[0].kl + 4.0 * pts[1].kl - pts[2].kl) / (2.0 * step);
    pts[m - 1].dkl_dt = (3.0 * pts[m - 1].kl - 4.0 * pts[m - 2].kl + pts[m - 3].kl) / (2.0 * step);
  }
  return trace;
}

}  // namespace langsplit
