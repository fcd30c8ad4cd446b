#include "langsplit/reverse.hpp"

#include "langsplit/convert.hpp"
#include "langsplit/parallel.hpp"
#include "langsplit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace langsplit {

Field oracle_field(const GaussianMixture& data, PredictionKind kind) {
  const Parameterization param = native_param(kind);
  return {kind, [data, param](const Matrix& states, double level) {
            return perturb(data, param, level).native_prediction(states);
          }};
}

namespace {

// Evaluates `field` for states given in `param` coordinates at `level`, and
// converts the result into prediction kind `target`.
Matrix evaluate_as(const Field& field, PredictionKind target, Parameterization param, const Matrix& states,
                   double level) {
  const Parameterization field_param = native_param(field.kind);
  const PointMap<double> pm = point_map(param, level, field_param);
  const Matrix field_states = pm.state_factor * states;
  const Matrix values = field.eval(field_states, pm.level);
  return convert_prediction_values(field.kind, target, field_param, pm.level, values, field_states);
}

}  // namespace

Field converted_field(const Field& field, PredictionKind target) {
  return {target, [field, target](const Matrix& states, double level) {
            return evaluate_as(field, target, native_param(target), states, level);
          }};
}

Integrator parse_integrator(std::string_view name) {
  if (name == "euler") return Integrator::euler;
  if (name == "heun") return Integrator::heun;
  throw ArgumentError("unknown integrator '" + std::string(name) + "' (expected euler, heun)");
}

GridKind parse_grid_kind(std::string_view name) {
  if (name == "uniform") return GridKind::uniform;
  if (name == "karras") return GridKind::karras;
  throw ArgumentError("unknown grid '" + std::string(name) + "' (expected uniform, karras)");
}

ReverseSpec::ReverseSpec(ModelType model_type, Field field, double start_clock)
    : model_type_(model_type), field_(std::move(field)), start_clock_(start_clock) {
  if (!field_.eval) throw ArgumentError("reverse process needs a field");
  if (!(start_clock_ > 0.0) || !std::isfinite(start_clock_))
    throw ArgumentError("reverse start clock must be positive and finite");
  if (param() == Parameterization::rectified_flow)
    check_level(Parameterization::rectified_flow, start_clock_);
}

double ReverseSpec::clock_offset() const {
  return param() == Parameterization::rectified_flow ? 1.0 : start_clock_;
}

double ReverseSpec::level_at(double t_rev) const {
  const double clock = std::max(0.0, clock_at(t_rev));
  return param() == Parameterization::vp ? vp_alpha_from_time(clock) : clock;
}

Matrix ReverseSpec::native_prediction(const Matrix& states, double level) const {
  return evaluate_as(field_, native_kind(param()), param(), states, level);
}

Matrix ReverseSpec::drift(const Matrix& states, double t_rev) const {
  const double level = level_at(t_rev);
  const Matrix pred = native_prediction(states, level);
  switch (model_type_) {
    case ModelType::vp_sde: return 0.5 * states + pred;
    case ModelType::vp_ode: return 0.5 * (states + pred);
    case ModelType::ve_karras:
    case ModelType::rectified_flow: return -pred;
  }
  return pred;
}

double ReverseSpec::initial_noise_std() const {
  return param() == Parameterization::vp ? 1.0 : start_clock_;
}

double default_start_clock(ModelType model_type, double data_std_bound) {
  switch (param_of(model_type)) {
    case Parameterization::vp: return std::log(1e4);
    case Parameterization::ve_karras: return 20.0 * data_std_bound;
    case Parameterization::rectified_flow: return 1.0 - limits::rf_sde_margin;
  }
  return 1.0;
}

namespace {

void check_window(const ReverseSpec& spec, double t_rev, double dt_rev) {
  if (!(dt_rev > 0.0)) throw ArgumentError("reverse step needs dt > 0");
  const double tol = 1e-12 * std::max(1.0, spec.reverse_end());
  if (t_rev < spec.reverse_start() - tol || t_rev + dt_rev > spec.reverse_end() + tol)
    throw DomainError("reverse step [" + std::to_string(t_rev) + ", " + std::to_string(t_rev + dt_rev) +
                      "] leaves the reverse window");
}

// Advances the columns of x in place from t to t + h.
void advance(const ReverseSpec& spec, Eigen::Ref<Matrix> x, double t, double h, Integrator integrator,
             std::vector<RngStream>* streams, std::ptrdiff_t first_chain) {
  const Matrix k1 = spec.drift(x, t);
  if (spec.stochastic() || integrator == Integrator::euler) {
    x += h * k1;
  } else {
    const Matrix predictor = x + h * k1;
    const Matrix k2 = spec.drift(predictor, t + h);
    x += (0.5 * h) * (k1 + k2);
  }
  if (spec.stochastic()) {
    const double sd = std::sqrt(h);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      auto& rng = (*streams)[std::size_t(first_chain + j)];
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += sd * rng.normal();
    }
  }
}

}  // namespace

Vector reverse_step(const ReverseSpec& spec, const Vector& x, double t_rev, double dt_rev, RngStream& rng,
                    Integrator integrator) {
  check_window(spec, t_rev, dt_rev);
  Matrix state = x;
  std::vector<RngStream> streams{rng};
  advance(spec, state, t_rev, dt_rev, integrator, &streams, 0);
  rng = streams.front();
  return state.col(0);
}

std::vector<double> reverse_time_grid(const ReverseSpec& spec, int steps, GridKind kind, double rho,
                                      double sigma_min) {
  if (steps < 0) throw ArgumentError("reverse grid needs a nonnegative step count");
  const double start = spec.reverse_start();
  const double end = spec.reverse_end();
  std::vector<double> grid(std::size_t(steps) + 1);
  grid[0] = start;
  if (steps == 0) return grid;
  if (kind == GridKind::uniform) {
    for (int k = 1; k < steps; ++k) grid[k] = start + (end - start) * double(k) / double(steps);
  } else {
    if (!(rho > 0.0)) throw ArgumentError("Karras exponent rho must be positive");
    const Parameterization p = spec.param();
    const double sigma_max = equivalent_sigma(p, spec.level_at(start));
    const double lo = std::pow(std::min(sigma_min, sigma_max), 1.0 / rho);
    const double hi = std::pow(sigma_max, 1.0 / rho);
    for (int k = 1; k < steps; ++k) {
      const double frac = steps > 1 ? double(k) / double(steps - 1) : 1.0;
      const double sigma = std::pow(hi + frac * (lo - hi), rho);
      double clock = sigma;
      if (p == Parameterization::vp) clock = std::log1p(sigma * sigma);
      if (p == Parameterization::rectified_flow) clock = sigma / (1.0 + sigma);
      grid[k] = spec.clock_offset() - clock;
    }
  }
  grid[std::size_t(steps)] = end;
  for (int k = 1; k <= steps; ++k)
    if (!(grid[k] > grid[k - 1])) throw ArgumentError("reverse grid is not strictly increasing");
  return grid;
}

GenerateResult generate(const ReverseSpec& spec, const GenerateOptions& options) {
  if (options.dim < 1 || options.n_chains < 1) throw ArgumentError("generate needs dim >= 1 and >= 1 chain");
  GenerateResult result;
  result.grid = reverse_time_grid(spec, options.steps, options.grid, options.karras_rho);
  const Eigen::Index n = options.n_chains;
  const Eigen::Index d = options.dim;

  std::vector<RngStream> streams;
  streams.reserve(std::size_t(n));
  for (Eigen::Index j = 0; j < n; ++j) streams.emplace_back(options.seed, std::uint64_t(j));

  result.states.resize(d, n);
  const double init_sd = spec.initial_noise_std();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i) result.states(i, j) = init_sd * streams[std::size_t(j)].normal();

  std::vector<int> keep = options.checkpoints;
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  auto record = [&](int step) {
    if (std::binary_search(keep.begin(), keep.end(), step))
      result.snapshots.push_back({step, result.grid[std::size_t(step)], spec.level_at(result.grid[std::size_t(step)]),
                                  result.states});
  };
  for (int idx : keep)
    if (idx < 0 || idx > options.steps) throw ArgumentError("checkpoint index outside the reverse grid");

  record(0);
  for (int k = 0; k < options.steps; ++k) {
    const double t = result.grid[std::size_t(k)];
    const double h = result.grid[std::size_t(k) + 1] - t;
    parallel_for_blocks(n, options.workers, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
      advance(spec, result.states.middleCols(b, e - b), t, h, options.integrator, &streams, b);
    });
    record(k + 1);
  }
  return result;
}

DualityReport duality_check(const GaussianMixture& data, ModelType model_type, const DualityOptions& options) {
  if (options.checkpoints < 2) throw ArgumentError("duality check needs at least two checkpoints");
  const Parameterization param = param_of(model_type);
  const double std_bound = std::sqrt(data.mixture_covariance().diagonal().maxCoeff() +
                                     data.mixture_mean().squaredNorm());
  const double start_clock =
      options.start_clock > 0.0 ? options.start_clock : default_start_clock(model_type, std_bound);
  const ReverseSpec spec(model_type, oracle_field(data, native_kind(param)), start_clock);

  GenerateOptions gen;
  gen.dim = data.dim();
  gen.n_chains = options.n_chains;
  gen.steps = options.steps;
  gen.seed = options.seed;
  gen.integrator = options.integrator;
  gen.grid = options.grid;
  gen.workers = options.workers;
  for (int c = 0; c < options.checkpoints; ++c)
    gen.checkpoints.push_back(int(std::lround(double(c) * options.steps / double(options.checkpoints - 1))));
  const GenerateResult run = generate(spec, gen);

  // Exact mismatch between the initial N(0, sd^2 I) and the true marginal at
  // the start level.
  const PerturbedMixture start_pm = perturb(data, param, spec.level_at(spec.reverse_start()));
  const Vector start_var = start_pm.marginal().mixture_covariance().diagonal();
  const double init_sd = spec.initial_noise_std();
  const double init_mean_gap = start_pm.marginal().mixture_mean().cwiseAbs().maxCoeff();
  const double init_var_rel_gap =
      ((start_var.array() - init_sd * init_sd).abs() / start_var.array()).maxCoeff();

  DualityReport report{model_type, {}, true, 0.0, run.states};
  for (const EnsembleSnapshot& snap : run.snapshots) {
    const PerturbedMixture pm = perturb(data, param, snap.level);
    const SampleMoments m = sample_moments(snap.states);
    DualityRow row;
    row.step = snap.step;
    row.t_rev = snap.t_rev;
    row.level = snap.level;
    row.mean = m.mean;
    row.variance = m.variance;
    row.exact_mean = pm.marginal().mixture_mean();
    row.exact_variance = pm.marginal().mixture_covariance().diagonal();
    row.se_mean = m.se_mean();
    row.se_variance = m.se_variance();
    row.pass = true;
    row.max_mean_error = row.max_variance_error = 0.0;
    row.mean_allowance = row.variance_allowance = 0.0;
    for (Eigen::Index i = 0; i < data.dim(); ++i) {
      const double v = row.exact_variance(i);
      const double bias = options.steps > 0 ? kDualityBiasPerStep / options.steps : 0.0;
      const double mean_tol = 4.0 * row.se_mean(i) + bias * std::sqrt(v) + init_mean_gap;
      const double var_tol = 4.0 * row.se_variance(i) + (bias + init_var_rel_gap) * v;
      const double mean_err = std::abs(row.mean(i) - row.exact_mean(i));
      const double var_err = std::abs(row.variance(i) - v);
      row.max_mean_error = std::max(row.max_mean_error, mean_err);
      row.max_variance_error = std::max(row.max_variance_error, var_err);
      row.mean_allowance = std::max(row.mean_allowance, mean_tol);
      row.variance_allowance = std::max(row.variance_allowance, var_tol);
      report.worst_ratio = std::max({report.worst_ratio, mean_err / mean_tol, var_err / var_tol});
      if (mean_err > mean_tol || var_err > var_tol) row.pass = false;
    }
    report.pass = report.pass && row.pass;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace langsplit
