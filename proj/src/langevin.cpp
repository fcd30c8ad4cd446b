#include "langsplit/langevin.hpp"

#include "langsplit/parallel.hpp"
#include "langsplit/stats.hpp"

#include <cmath>

namespace langsplit {
namespace {

void check_dtau(double dtau) {
  if (!(dtau > 0.0)) throw ArgumentError("Langevin step needs dtau > 0");
}

MomentTracePoint trace_point(int step, double tau, const Matrix& x) {
  const Vector mean = x.rowwise().mean();
  Vector var = Vector::Zero(x.rows());
  if (x.cols() > 1) var = (x.colwise() - mean).array().square().rowwise().sum() / double(x.cols() - 1);
  return {step, tau, mean, var};
}

}  // namespace

Vector langevin_step(const LangevinSpec& spec, const Vector& x, double tau, double dtau, RngStream& rng) {
  check_dtau(dtau);
  const double g = spec.g(tau);
  if (!(g > 0.0)) throw ArgumentError("Langevin rate g(tau) must be positive");
  const Vector s = spec.score(x, spec.level).col(0);
  const BrownianIncrement dw = draw_increment(rng, dtau, x.size());
  return x + g * dtau * s + std::sqrt(2.0 * g) * dw.noise;
}

LangevinRun run_langevin(const LangevinSpec& spec, const Matrix& x0, double tau0, double dtau, int steps,
                         std::uint64_t seed, int trace_every, int workers) {
  check_dtau(dtau);
  if (steps < 0) throw ArgumentError("Langevin run needs a nonnegative step count");
  LangevinRun run;
  run.states = x0;
  const Eigen::Index n = x0.cols();
  const Eigen::Index d = x0.rows();
  std::vector<RngStream> streams;
  streams.reserve(std::size_t(n));
  for (Eigen::Index j = 0; j < n; ++j) streams.emplace_back(seed, std::uint64_t(j));

  if (trace_every > 0) run.trace.push_back(trace_point(0, tau0, run.states));
  for (int k = 0; k < steps; ++k) {
    const double tau = tau0 + dtau * double(k);
    const double g = spec.g(tau);
    if (!(g > 0.0)) throw ArgumentError("Langevin rate g(tau) must be positive");
    const double noise = std::sqrt(2.0 * g * dtau);
    parallel_for_blocks(n, workers, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
      auto block = run.states.middleCols(b, e - b);
      const Matrix s = spec.score(block, spec.level);
      block += (g * dtau) * s;
      for (std::ptrdiff_t j = b; j < e; ++j)
        for (Eigen::Index i = 0; i < d; ++i) run.states(i, j) += noise * streams[std::size_t(j)].normal();
    });
    const int done = k + 1;
    if (trace_every > 0 && (done % trace_every == 0 || done == steps))
      run.trace.push_back(trace_point(done, tau0 + dtau * double(done), run.states));
  }
  return run;
}

double langevin_rate(ModelType row, double tau) {
  switch (row) {
    case ModelType::vp_sde: return 1.0;
    case ModelType::vp_ode: return 0.5;
    case ModelType::ve_karras: return tau;
    case ModelType::rectified_flow: return tau / (1.0 - tau);
  }
  return 1.0;
}

double split_tau(ModelType row, double level) {
  switch (row) {
    case ModelType::vp_sde:
    case ModelType::vp_ode: return 0.0;
    case ModelType::ve_karras:
    case ModelType::rectified_flow: return level;
  }
  return level;
}

SplitCoefficients split_coefficients(ModelType row, const Vector& x, const Vector& score, double tau) {
  if (x.size() != score.size()) throw ArgumentError("state and score dimensions differ");
  const double g = langevin_rate(row, tau);
  SplitCoefficients c;
  c.langevin = {g * score, 2.0 * g};
  switch (row) {
    case ModelType::vp_sde:
      c.forward = {-0.5 * x, 1.0};
      c.reverse = {0.5 * x + score, 1.0};
      break;
    case ModelType::vp_ode:
      c.forward = {-0.5 * x, 1.0};
      c.reverse = {0.5 * (x + score), 0.0};
      break;
    case ModelType::ve_karras:
      c.forward = {Vector::Zero(x.size()), 2.0 * tau};
      c.reverse = {tau * score, 0.0};
      break;
    case ModelType::rectified_flow:
      c.forward = {-x / (1.0 - tau), 2.0 * tau / (1.0 - tau)};
      c.reverse = {(tau * score + x) / (1.0 - tau), 0.0};
      break;
  }
  return c;
}

namespace {

// Forward part on x, then reverse part on the result, writing into the two
// outputs. Increments come from `rng` in the order dW1 then dW2.
template <typename X, typename Mid>
void split_substeps(const SplitStep& step, X&& x, Mid&& mid, double level, double dtau, double tau,
                    const Matrix& score_at_x, const std::function<Matrix(const Matrix&)>& score_of,
                    std::vector<RngStream>& streams, std::ptrdiff_t first_chain) {
  const Eigen::Index d = x.rows();
  const Eigen::Index n = x.cols();
  (void)level;
  // Forward substep (drift is linear in x, score-free).
  for (Eigen::Index j = 0; j < n; ++j) {
    const SplitCoefficients c = split_coefficients(step.row, x.col(j), score_at_x.col(j), tau);
    const double sd = std::sqrt(c.forward.variance_rate * dtau);
    auto& rng = streams[std::size_t(first_chain + j)];
    for (Eigen::Index i = 0; i < d; ++i) mid(i, j) = x(i, j) + c.forward.drift(i) * dtau + sd * rng.normal();
  }
  const Matrix score_mid = score_of(mid);
  for (Eigen::Index j = 0; j < n; ++j) {
    const SplitCoefficients c = split_coefficients(step.row, mid.col(j), score_mid.col(j), tau);
    const double sd = std::sqrt(c.reverse.variance_rate * dtau);
    auto& rng = streams[std::size_t(first_chain + j)];
    for (Eigen::Index i = 0; i < d; ++i) {
      const double dw = c.reverse.variance_rate > 0.0 ? sd * rng.normal() : 0.0;
      x(i, j) = mid(i, j) + c.reverse.drift(i) * dtau + dw;
    }
  }
}

}  // namespace

std::pair<Vector, Vector> split_step(const SplitStep& step, const Vector& x, double level, double dtau,
                                     RngStream& rng) {
  check_dtau(dtau);
  const double tau = split_tau(step.row, level);
  Matrix state = x;
  Matrix mid(x.size(), 1);
  std::vector<RngStream> streams{rng};
  auto score_of = [&](const Matrix& m) { return step.score(m, level); };
  split_substeps(step, state, mid, level, dtau, tau, score_of(state), score_of, streams, 0);
  rng = streams.front();
  return {mid.col(0), state.col(0)};
}

Matrix split_step_ensemble(const SplitStep& step, const Matrix& x, double level, double dtau, std::uint64_t seed,
                           int workers) {
  check_dtau(dtau);
  const double tau = split_tau(step.row, level);
  Matrix out = x;
  std::vector<RngStream> streams;
  for (Eigen::Index j = 0; j < x.cols(); ++j) streams.emplace_back(seed, std::uint64_t(j));
  auto score_of = [&](const Matrix& m) { return step.score(m, level); };
  parallel_for_blocks(x.cols(), workers, [&](std::ptrdiff_t b, std::ptrdiff_t e) {
    Matrix block = out.middleCols(b, e - b);
    Matrix mid(block.rows(), block.cols());
    split_substeps(step, block, mid, level, dtau, tau, score_of(block), score_of, streams, b);
    out.middleCols(b, e - b) = block;
  });
  return out;
}

LangevinSpec langevin_of(const SplitStep& step, Parameterization param, double level) {
  const ModelType row = step.row;
  return {step.score, [row](double tau) { return langevin_rate(row, tau); }, param, level};
}

TransitionDefect split_transition_defect(const SplitStep& step, double x, double level, double dtau, int nodes) {
  check_dtau(dtau);
  const double tau = split_tau(step.row, level);
  const QuadratureRule rule = gauss_hermite(nodes);
  const Vector x_vec = Vector::Constant(1, x);
  const Vector s_x = step.score(x_vec, level).col(0);
  const SplitCoefficients at_x = split_coefficients(step.row, x_vec, s_x, tau);

  Matrix mid(1, nodes);
  mid.row(0) = (x + at_x.forward.drift(0) * dtau + std::sqrt(at_x.forward.variance_rate * dtau) * rule.nodes.array())
                   .matrix()
                   .transpose();
  const Matrix s_mid = step.score(mid, level);
  Vector out(nodes);
  double reverse_var = 0.0;
  for (int k = 0; k < nodes; ++k) {
    const SplitCoefficients c =
        split_coefficients(step.row, Vector::Constant(1, mid(0, k)), Vector::Constant(1, s_mid(0, k)), tau);
    out(k) = mid(0, k) + c.reverse.drift(0) * dtau;
    reverse_var += rule.weights(k) * c.reverse.variance_rate * dtau;
  }
  const double mean = rule.weights.dot(out);
  const double variance = rule.weights.dot((out.array() - mean).square().matrix()) + reverse_var;
  const double g = langevin_rate(step.row, tau);
  return {std::abs(mean - (x + g * s_x(0) * dtau)), std::abs(variance - 2.0 * g * dtau)};
}

}  // namespace langsplit
