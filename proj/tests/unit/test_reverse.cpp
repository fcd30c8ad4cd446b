#include "doctest.h"

#include "langsplit/convert.hpp"
#include "langsplit/reverse.hpp"
#include "langsplit/stats.hpp"

#include <array>
#include <cmath>

using namespace langsplit;

namespace {

constexpr std::array<ModelType, 4> kRows{ModelType::vp_sde, ModelType::vp_ode, ModelType::ve_karras,
                                         ModelType::rectified_flow};

GaussianMixture gaussian1d(double mean, double var) {
  return GaussianMixture::gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, var));
}

GaussianMixture separated_bimodal() {
  return GaussianMixture::isotropic(Vector::Constant(2, 0.5), {Vector::Constant(1, -2.0), Vector::Constant(1, 2.0)},
                                    {0.1, 0.1});
}

ReverseSpec oracle_spec(const GaussianMixture& data, ModelType row, double start_clock) {
  return ReverseSpec(row, oracle_field(data, native_kind(param_of(row))), start_clock);
}

// Exact probability-flow map of 1D Gaussian data N(mu, v) from the start
// level to `level`: the marginal is Gaussian with mean m(level) and std
// sd(level), and the flow is the affine map between standardized values.
double gaussian_flow(Parameterization p, double mu, double v, double x_start, double start_level, double level) {
  auto moments = [&](double lvl) -> std::pair<double, double> {
    switch (p) {
      case Parameterization::vp: return {std::sqrt(lvl) * mu, std::sqrt(lvl * v + 1.0 - lvl)};
      case Parameterization::ve_karras: return {mu, std::sqrt(v + lvl * lvl)};
      case Parameterization::rectified_flow:
        return {(1.0 - lvl) * mu, std::sqrt((1.0 - lvl) * (1.0 - lvl) * v + lvl * lvl)};
    }
    return {0.0, 1.0};
  };
  const auto [m0, s0] = moments(start_level);
  const auto [m1, s1] = moments(level);
  return m1 + s1 / s0 * (x_start - m0);
}

// Runs a deterministic row from x along a uniform grid of `steps`.
double integrate(const ReverseSpec& spec, double x, int steps) {
  const std::vector<double> grid = reverse_time_grid(spec, steps);
  RngStream rng(0, 0);
  Vector state = Vector::Constant(1, x);
  for (int k = 0; k < steps; ++k) state = reverse_step(spec, state, grid[k], grid[k + 1] - grid[k], rng);
  return state(0);
}

}  // namespace

TEST_CASE("clock map is a decreasing bijection onto the level window") {
  const GaussianMixture data = gaussian1d(0.0, 1.0);
  for (ModelType row : kRows) {
    const double start = default_start_clock(row, 1.0);
    const ReverseSpec spec = oracle_spec(data, row, start);
    CHECK(spec.clock_at(spec.reverse_start()) == doctest::Approx(start).epsilon(1e-15));
    CHECK(spec.clock_at(spec.reverse_end()) == 0.0);
    for (GridKind kind : {GridKind::uniform, GridKind::karras}) {
      const std::vector<double> grid = reverse_time_grid(spec, 50, kind);
      REQUIRE(grid.size() == 51);
      CHECK(grid.front() == spec.reverse_start());
      CHECK(grid.back() == spec.reverse_end());
      for (std::size_t k = 1; k < grid.size(); ++k) CHECK(grid[k] > grid[k - 1]);
      // Levels move monotonically toward the data end.
      for (std::size_t k = 1; k < grid.size(); ++k) {
        const double a = equivalent_sigma(spec.param(), spec.level_at(grid[k - 1]));
        const double b = equivalent_sigma(spec.param(), spec.level_at(grid[k]));
        CHECK(b < a);
      }
    }
  }
}

TEST_CASE("Karras grid spans sigma_max to sigma_min before the final zero-noise step") {
  const GaussianMixture data = gaussian1d(0.0, 1.0);
  for (ModelType row : kRows) {
    const ReverseSpec spec = oracle_spec(data, row, default_start_clock(row, 1.0));
    const int steps = 40;
    const std::vector<double> grid = reverse_time_grid(spec, steps, GridKind::karras, 7.0, 2e-3);
    const double sigma_last = equivalent_sigma(spec.param(), spec.level_at(grid[steps - 1]));
    CHECK(sigma_last == doctest::Approx(2e-3).epsilon(1e-9));
    // rho = 1 spaces the equivalent sigma uniformly.
    const std::vector<double> lin = reverse_time_grid(spec, steps, GridKind::karras, 1.0, 2e-3);
    const double s1 = equivalent_sigma(spec.param(), spec.level_at(lin[1]));
    const double s2 = equivalent_sigma(spec.param(), spec.level_at(lin[2]));
    const double s3 = equivalent_sigma(spec.param(), spec.level_at(lin[3]));
    CHECK(s1 - s2 == doctest::Approx(s2 - s3).epsilon(1e-8));
  }
  const ReverseSpec spec = oracle_spec(data, ModelType::vp_sde, 6.0);
  CHECK_THROWS_AS(reverse_time_grid(spec, 10, GridKind::karras, 0.0), ArgumentError);
  CHECK_THROWS_AS(reverse_time_grid(spec, -1), ArgumentError);
}

TEST_CASE("zero steps return the initial noise ensemble") {
  const GaussianMixture data = separated_bimodal();
  for (ModelType row : kRows) {
    const ReverseSpec spec = oracle_spec(data, row, default_start_clock(row, 2.1));
    GenerateOptions opt;
    opt.n_chains = 64;
    opt.steps = 0;
    opt.seed = 17;
    const GenerateResult out = generate(spec, opt);
    REQUIRE(out.grid.size() == 1);
    for (Eigen::Index j = 0; j < opt.n_chains; ++j) {
      RngStream rng(17, std::uint64_t(j));
      CHECK(out.states(0, j) == spec.initial_noise_std() * rng.normal());
    }
  }
}

TEST_CASE("deterministic rows on point-like data follow straight lines") {
  // Nearly a point mass at mu: VE noise is (z - mu) / sigma and RF velocity
  // (r - mu) / s, so the exact paths are linear in the level and Euler
  // reproduces them.
  const double mu = 0.7;
  const GaussianMixture data = gaussian1d(mu, 1e-14);
  const double z_start = 13.0;
  {
    const double sigma_start = 20.0;
    const ReverseSpec spec = oracle_spec(data, ModelType::ve_karras, sigma_start);
    const std::vector<double> grid = reverse_time_grid(spec, 64);
    RngStream rng(0, 0);
    Vector z = Vector::Constant(1, z_start);
    for (int k = 0; k < 64; ++k) {
      z = reverse_step(spec, z, grid[k], grid[k + 1] - grid[k], rng);
      const double sigma = spec.level_at(grid[k + 1]);
      CHECK(z(0) == doctest::Approx(mu + sigma / sigma_start * (z_start - mu)).epsilon(1e-9));
    }
    CHECK(std::abs(z(0) - mu) < 1e-9);
  }
  {
    const double s_start = 1.0 - 1e-3;
    const ReverseSpec spec = oracle_spec(data, ModelType::rectified_flow, s_start);
    const double r_start = 1.8;
    for (int steps : {1, 10, 100}) CHECK(std::abs(integrate(spec, r_start, steps) - mu) < 1e-9);
  }
}

TEST_CASE("VP-ODE leaves a standard normal stationary") {
  const GaussianMixture data = gaussian1d(0.0, 1.0);
  const ReverseSpec spec = oracle_spec(data, ModelType::vp_ode, 6.0);
  for (double x : {-2.5, 0.3, 4.0}) CHECK(std::abs(integrate(spec, x, 100) - x) < 1e-12);
}

TEST_CASE("ODE rows converge at first order to the exact Gaussian flow") {
  const double mu = 1.5, v = 0.3, x_start = 0.8;
  const GaussianMixture data = gaussian1d(mu, v);
  for (ModelType row : {ModelType::vp_ode, ModelType::ve_karras, ModelType::rectified_flow}) {
    const double start = row == ModelType::vp_ode ? 6.0 : row == ModelType::ve_karras ? 20.0 : 1.0 - 1e-3;
    const ReverseSpec spec = oracle_spec(data, row, start);
    const double exact = gaussian_flow(spec.param(), mu, v, x_start, spec.level_at(spec.reverse_start()),
                                       spec.level_at(spec.reverse_end()));
    const double e1 = std::abs(integrate(spec, x_start, 400) - exact);
    const double e2 = std::abs(integrate(spec, x_start, 800) - exact);
    const double e3 = std::abs(integrate(spec, x_start, 1600) - exact);
    INFO(to_string(row), " errors ", e1, " ", e2, " ", e3);
    CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.15));
    CHECK(e2 / e3 == doctest::Approx(2.0).epsilon(0.1));
  }
}

TEST_CASE("Heun is second order on the Gaussian flow") {
  const double mu = 1.5, v = 0.3, x_start = 0.8;
  const GaussianMixture data = gaussian1d(mu, v);
  const ReverseSpec spec = oracle_spec(data, ModelType::rectified_flow, 1.0 - 1e-3);
  const double exact = gaussian_flow(spec.param(), mu, v, x_start, spec.level_at(spec.reverse_start()), 0.0);
  auto heun = [&](int steps) {
    const std::vector<double> grid = reverse_time_grid(spec, steps);
    RngStream rng(0, 0);
    Vector x = Vector::Constant(1, x_start);
    for (int k = 0; k < steps; ++k) x = reverse_step(spec, x, grid[k], grid[k + 1] - grid[k], rng, Integrator::heun);
    return std::abs(x(0) - exact);
  };
  CHECK(heun(200) / heun(400) == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("VP-SDE regenerates a Gaussian") {
  const GaussianMixture data = gaussian1d(2.0, 0.25);
  const ReverseSpec spec = oracle_spec(data, ModelType::vp_sde, 6.0);
  GenerateOptions opt;
  opt.n_chains = 100000;
  opt.steps = 400;
  opt.seed = 5;
  const SampleMoments m = sample_moments(generate(spec, opt).states);
  CHECK(m.mean(0) == doctest::Approx(2.0).epsilon(0.01));
  CHECK(std::abs(m.variance(0) - 0.25) < 0.02);
}

TEST_CASE("VE regenerates a separated bimodal mixture") {
  const GaussianMixture data = separated_bimodal();
  const ReverseSpec spec = oracle_spec(data, ModelType::ve_karras, 20.0);
  GenerateOptions opt;
  opt.n_chains = 40000;
  opt.steps = 400;
  opt.seed = 9;
  opt.grid = GridKind::karras;
  const Matrix x = generate(spec, opt).states;
  double upper = 0.0, sum_lo = 0.0, sum_hi = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x(0, j) > 0.0) {
      upper += 1.0;
      sum_hi += x(0, j);
    } else {
      sum_lo += x(0, j);
    }
  }
  const double n = double(x.cols());
  CHECK(std::abs(upper / n - 0.5) < 0.02);
  CHECK(std::abs(sum_hi / upper - 2.0) < 0.05);
  CHECK(std::abs(sum_lo / (n - upper) + 2.0) < 0.05);
}

TEST_CASE("duality check on Gaussian data") {
  const GaussianMixture data = gaussian1d(2.0, 0.25);
  DualityOptions opt;
  opt.n_chains = 20000;
  opt.checkpoints = 5;
  for (ModelType row : kRows) {
    const DualityReport report = duality_check(data, row, opt);
    INFO(to_string(row), " worst ratio ", report.worst_ratio);
    CHECK(report.pass);
    REQUIRE(report.rows.size() == 5);
    CHECK(report.rows.front().step == 0);
    CHECK(report.rows.back().step == opt.steps);
    // The t' = 0 checkpoint is the initial noise by construction.
    const DualityRow& first = report.rows.front();
    CHECK(first.max_mean_error <= first.mean_allowance);
  }
  opt.checkpoints = 1;
  CHECK_THROWS_AS(duality_check(data, ModelType::vp_sde, opt), ArgumentError);
}

TEST_CASE("duality check flags a wrong field") {
  // The reverse process is driven by the field of a different mixture, so the
  // terminal ensemble misses the data moments.
  const GaussianMixture data = gaussian1d(2.0, 0.25);
  const GaussianMixture wrong = gaussian1d(1.0, 0.25);
  const ReverseSpec spec = oracle_spec(wrong, ModelType::vp_ode, 6.0);
  GenerateOptions opt;
  opt.n_chains = 5000;
  opt.steps = 200;
  const SampleMoments m = sample_moments(generate(spec, opt).states);
  CHECK(std::abs(m.mean(0) - 2.0) > 0.5);
}

TEST_CASE("VP-ODE and VP-SDE agree on the data distribution") {
  const GaussianMixture data = separated_bimodal();
  GenerateOptions opt;
  opt.n_chains = 40000;
  opt.steps = 400;
  opt.grid = GridKind::karras;
  const double T = default_start_clock(ModelType::vp_sde, 2.1);
  const SampleMoments sde = sample_moments(generate(oracle_spec(data, ModelType::vp_sde, T), opt).states);
  opt.seed = 1;
  const Matrix ode_x = generate(oracle_spec(data, ModelType::vp_ode, T), opt).states;
  const SampleMoments ode = sample_moments(ode_x);
  CHECK(std::abs(sde.mean(0) - ode.mean(0)) < 4.0 * std::hypot(sde.se_mean()(0), ode.se_mean()(0)));
  CHECK(std::abs(sde.variance(0) - ode.variance(0)) <
        4.0 * std::hypot(sde.se_variance()(0), ode.se_variance()(0)) + 20.0 / opt.steps * 4.1);
  // Third central moment: zero for the symmetric mixture.
  double m3 = 0.0;
  for (Eigen::Index j = 0; j < ode_x.cols(); ++j) m3 += std::pow(ode_x(0, j) - ode.mean(0), 3);
  m3 /= double(ode_x.cols());
  CHECK(std::abs(m3) < 0.15);
}

TEST_CASE("a converted field drives the same trajectories as the native path") {
  const GaussianMixture data = separated_bimodal();
  const Field score = oracle_field(data, PredictionKind::score);
  for (ModelType row : kRows) {
    const PredictionKind native = native_kind(param_of(row));
    const double start = default_start_clock(row, 2.1);
    const ReverseSpec direct(row, score, start);
    const ReverseSpec wrapped(row, converted_field(score, native), start);
    GenerateOptions opt;
    opt.n_chains = 200;
    opt.steps = 50;
    opt.seed = 3;
    const Matrix a = generate(direct, opt).states;
    const Matrix b = generate(wrapped, opt).states;
    CHECK((a.array() == b.array()).all());
  }
}

TEST_CASE("every field kind regenerates the same distribution") {
  const GaussianMixture data = gaussian1d(2.0, 0.25);
  for (ModelType row : kRows) {
    for (PredictionKind kind : {PredictionKind::score, PredictionKind::noise, PredictionKind::velocity}) {
      const ReverseSpec spec(row, oracle_field(data, kind), default_start_clock(row, 2.1));
      GenerateOptions opt;
      opt.n_chains = 4000;
      opt.steps = 200;
      opt.grid = GridKind::karras;
      const SampleMoments m = sample_moments(generate(spec, opt).states);
      INFO(to_string(row), " field ", to_string(kind));
      CHECK(std::abs(m.mean(0) - 2.0) < 4.0 * m.se_mean()(0) + 0.02);
      CHECK(std::abs(m.variance(0) - 0.25) < 4.0 * m.se_variance()(0) + 0.025);
    }
  }
}

TEST_CASE("generation does not depend on the worker count") {
  const GaussianMixture data = separated_bimodal();
  for (ModelType row : {ModelType::vp_sde, ModelType::rectified_flow}) {
    const ReverseSpec spec = oracle_spec(data, row, default_start_clock(row, 2.1));
    GenerateOptions opt;
    opt.n_chains = 257;
    opt.steps = 30;
    opt.checkpoints = {0, 15, 30};
    const GenerateResult one = generate(spec, opt);
    opt.workers = 4;
    const GenerateResult four = generate(spec, opt);
    CHECK((one.states.array() == four.states.array()).all());
    REQUIRE(four.snapshots.size() == 3);
    CHECK((one.snapshots[1].states.array() == four.snapshots[1].states.array()).all());
  }
}

TEST_CASE("reverse argument and domain errors") {
  const GaussianMixture data = gaussian1d(0.0, 1.0);
  const ReverseSpec spec = oracle_spec(data, ModelType::ve_karras, 10.0);
  RngStream rng(0, 0);
  const Vector x = Vector::Zero(1);
  CHECK_THROWS_AS(reverse_step(spec, x, 9.5, 1.0, rng), DomainError);
  CHECK_THROWS_AS(reverse_step(spec, x, -0.5, 0.6, rng), DomainError);
  CHECK_THROWS_AS(reverse_step(spec, x, 1.0, 0.0, rng), ArgumentError);
  CHECK_THROWS_AS(ReverseSpec(ModelType::rectified_flow, oracle_field(data, PredictionKind::velocity), 1.0),
                  DomainError);
  CHECK_THROWS_AS(ReverseSpec(ModelType::vp_sde, oracle_field(data, PredictionKind::score), -1.0), ArgumentError);
  CHECK_THROWS_AS(ReverseSpec(ModelType::vp_sde, Field{}, 1.0), ArgumentError);
  GenerateOptions opt;
  opt.steps = 5;
  opt.checkpoints = {6};
  CHECK_THROWS_AS(generate(spec, opt), ArgumentError);
  opt.checkpoints = {};
  opt.n_chains = 0;
  CHECK_THROWS_AS(generate(spec, opt), ArgumentError);
  CHECK_THROWS_AS(parse_integrator("rk4"), ArgumentError);
  CHECK_THROWS_AS(parse_grid_kind("cosine"), ArgumentError);
  CHECK(parse_grid_kind("karras") == GridKind::karras);
}
