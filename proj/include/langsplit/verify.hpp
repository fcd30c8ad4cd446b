#pragma once

// Property suites: each checks one group of identities numerically and
// reports one line per property. Shared by the `verify` command and the
// acceptance runner.

#include "langsplit/mlp.hpp"
#include "langsplit/oracle.hpp"
#include "langsplit/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace langsplit {

struct PropertyResult {
  std::string suite;
  std::string name;
  bool pass = false;
  std::string detail;  // measured value against its tolerance
};

struct SuiteOptions {
  /// Smaller ensembles and shorter runs with the same tolerances, except the
  /// training suite, which then runs a short smoke experiment.
  bool quick = false;
  /// Offsets every seed the suites use; 0 reproduces the calibrated runs.
  std::uint64_t seed = 0;
  int workers = 1;
};

/// core, conversions, oracle, forward, langevin, split, duality, dsm,
/// gradients, training, fokker-planck, determinism.
const std::vector<std::string>& suite_names();

/// Throws ArgumentError for an unknown suite.
std::vector<PropertyResult> run_suite(const std::string& name, const SuiteOptions& options);
std::vector<PropertyResult> run_all(const SuiteOptions& options);

bool all_passed(const std::vector<PropertyResult>& results);

/// The trained-model experiment: 2D two-mode data, a VP score MLP and the
/// training defaults of the `train` command.
struct TrainingExperiment {
  GaussianMixture data;
  MLPConfig model;
  TrainConfig train;
  LossSpec loss;
  std::uint64_t model_seed = 0;
  /// VP levels alpha at which the score error is measured.
  std::vector<double> mid_levels;
  double max_relative_l2 = 0.1;
  double max_mass_error = 0.05;
};

TrainingExperiment default_training_experiment();

}  // namespace langsplit
