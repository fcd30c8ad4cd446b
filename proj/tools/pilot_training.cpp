// Calibration pilot for the trained-model check: trains the default
// experiment and prints the score error over a range of levels and the mode
// mass recovered by both VP reverse rows.
//   langsplit_pilot_training [seed] [paper|sigma2] [batch] [steps]

#include "langsplit/reverse.hpp"
#include "langsplit/train.hpp"
#include "langsplit/verify.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

using namespace langsplit;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  TrainingExperiment ex = default_training_experiment();
  if (argc > 1) ex.train.seed = std::strtoull(argv[1], nullptr, 10);
  if (argc > 2 && std::string(argv[2]) == "paper") ex.loss = {ModelType::vp_sde, WeightMode::paper, {}, {}};
  if (argc > 3) ex.train.batch_size = std::atol(argv[3]);
  if (argc > 4) ex.train.steps = std::atoi(argv[4]);
  ex.model_seed = ex.train.seed;

  auto t0 = std::chrono::steady_clock::now();
  const MLPModel init = MLPModel::create(PredictionKind::score, ex.model, ex.model_seed);
  const TrainResult r = train(init, ex.data, ex.loss, ex.train);
  std::printf("seed %llu, batch %lld, steps %d: trained in %.1f s, final loss %.6g\n",
              static_cast<unsigned long long>(ex.train.seed), static_cast<long long>(ex.train.batch_size),
              ex.train.steps, seconds_since(t0), r.trace.back().loss);
  for (double alpha : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95})
    std::printf("alpha %.2f  relative L2 %.4f\n", alpha, field_error(r.model, ex.data, alpha, 20000, 5).relative_l2);

  const Vector a = ex.data.mean(0), b = ex.data.mean(1);
  for (ModelType row : {ModelType::vp_sde, ModelType::vp_ode}) {
    GenerateOptions g;
    g.dim = 2;
    g.n_chains = 20000;
    g.steps = 400;
    g.grid = GridKind::karras;
    g.seed = 9;
    t0 = std::chrono::steady_clock::now();
    const Matrix x = generate(ReverseSpec(row, model_field(r.model), default_start_clock(row, 2.0)), g).states;
    Eigen::Index first = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if ((x.col(j) - a).squaredNorm() < (x.col(j) - b).squaredNorm()) ++first;
    std::printf("%-6s first-mode mass %.4f  (%.1f s)\n", std::string(to_string(row)).c_str(),
                double(first) / double(x.cols()), seconds_since(t0));
  }
}
