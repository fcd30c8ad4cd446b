// langsplit: experiment runner. Every command resolves its configuration
// (built-in defaults, then --config, then flags), writes its outputs plus
// config.resolved.json and manifest.json into --out, and returns
//   0 success, 2 config or argument error, 3 domain or training error,
//   4 verification failure, 1 anything else.

#include "run_context.hpp"

#include "langsplit/convert.hpp"
#include "langsplit/fokker_planck.hpp"
#include "langsplit/forward.hpp"
#include "langsplit/io.hpp"
#include "langsplit/langevin.hpp"
#include "langsplit/reverse.hpp"
#include "langsplit/stats.hpp"
#include "langsplit/train.hpp"
#include "langsplit/verify.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <optional>

using namespace langsplit;
using langsplit::cli::RunContext;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDomain = 3;
constexpr int kExitVerify = 4;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool gnuplot = false;
  bool timing = false;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
  app->add_option("--config", c.config, "JSON config file (comments allowed)");
  app->add_option("--out", c.out, "output directory (default $LANGSPLIT_OUTPUT_ROOT/<command>)");
  if (with_seed) app->add_option("--seed", c.seed, "random seed");
  app->add_option("--workers", c.workers, "worker threads; outputs do not depend on it")->check(CLI::Range(1, 256));
  app->add_flag("--emit-gnuplot", c.gnuplot, "also write plot.gp for the CSV outputs");
  app->add_flag("--timing", c.timing, "record wall-clock time in the manifest (breaks byte-identity)");
}

// Names parsed from config strings report the config path on failure.
template <typename F>
auto named(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ArgumentError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Defaults, then the config file, then flags (only those given).
Json resolve(Json config, const Common& c, const Json& flags, const std::set<std::string>& opaque = {}) {
  if (!c.config.empty()) cli::merge_config(config, read_json_file(c.config), "config", opaque);
  if (c.seed) config["seed"] = *c.seed;
  cli::merge_config(config, flags, "flags", opaque);
  return config;
}

std::filesystem::path output_dir(const Common& c, const std::string& command) {
  return c.out.empty() ? cli::default_output_dir(command) : std::filesystem::path(c.out);
}

std::vector<std::string> state_columns(const std::string& prefix, Eigen::Index d) {
  std::vector<std::string> cols{prefix};
  for (Eigen::Index i = 0; i < d; ++i) cols.push_back("state_" + std::to_string(i));
  return cols;
}

/// One row per column of `states`: index, then coordinates.
void write_states(RunContext& run, const std::string& file, const Matrix& states) {
  CsvWriter csv(run.path(file), state_columns("chain_id", states.rows()));
  std::vector<CsvWriter::Cell> row(std::size_t(states.rows()) + 1);
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    row[0] = static_cast<long long>(j);
    for (Eigen::Index i = 0; i < states.rows(); ++i) row[std::size_t(i) + 1] = states(i, j);
    csv.row(row);
  }
  csv.close();
  run.add_output(file);
}

double data_std_bound(const GaussianMixture& data) {
  return std::sqrt(data.mixture_covariance().diagonal().maxCoeff() + data.mixture_mean().squaredNorm());
}

Json gaussian_json(double mean, double variance) {
  return {{"components", Json::array({{{"weight", 1.0}, {"mean", {mean}}, {"variance", variance}}})}};
}

Json bimodal_json(double offset, double variance) {
  return {{"components", Json::array({{{"weight", 0.5}, {"mean", {-offset}}, {"variance", variance}},
                                      {{"weight", 0.5}, {"mean", {offset}}, {"variance", variance}}})}};
}

std::string level_symbol(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return "alpha";
    case Parameterization::ve_karras: return "sigma";
    case Parameterization::rectified_flow: return "s";
  }
  return "level";
}

std::string state_symbol(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return "x";
    case Parameterization::ve_karras: return "z";
    case Parameterization::rectified_flow: return "r";
  }
  return "state";
}

std::string vector_text(const Vector& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v(i));
  return s + "]";
}

// ---------------------------------------------------------------- convert

struct ConvertArgs {
  Common common;
  std::string from, to, kind, to_kind;
  std::optional<double> level;
  std::vector<double> state, value;
};

int run_convert(const ConvertArgs& a) {
  Json flags = Json::object();
  if (!a.from.empty()) flags["from"] = a.from;
  if (!a.to.empty()) flags["to"] = a.to;
  if (a.level) flags["level"] = *a.level;
  if (!a.state.empty()) flags["state"] = a.state;
  if (!a.kind.empty()) flags["kind"] = a.kind;
  if (!a.value.empty()) flags["value"] = a.value;
  if (!a.to_kind.empty()) flags["to_kind"] = a.to_kind;
  const Json defaults = {{"from", nullptr}, {"to", nullptr}, {"level", nullptr}, {"state", nullptr},
                         {"kind", nullptr}, {"value", nullptr}, {"to_kind", nullptr}};
  Json cfg = resolve(defaults, a.common, flags);
  cfg.erase("seed");

  JsonObject o(cfg, "config");
  auto required = [&](const std::string& key) -> const Json& {
    const Json& v = o.at(key);
    if (v.is_null()) throw ConfigError("convert needs " + key + " (flag --" + key + " or config key)");
    return v;
  };
  const std::string from_name = required("from").get<std::string>();
  ParamPointd point;
  point.param = named("config.from", [&] { return parse_parameterization(from_name); });
  if (!required("level").is_number()) throw ConfigError("config.level must be a number");
  point.level = o.at("level").get<double>();
  point.state = vector_from_json(required("state"), "config.state");
  validate(point);

  const bool prediction = !o.at("kind").is_null() || !o.at("value").is_null() || !o.at("to_kind").is_null();
  Json result;
  std::string text;
  if (prediction) {
    const std::string kind_name = required("kind").get<std::string>();
    const std::string target_name = required("to_kind").get<std::string>();
    Predictiond pred;
    pred.kind = named("config.kind", [&] { return parse_prediction_kind(kind_name); });
    pred.value = vector_from_json(required("value"), "config.value");
    pred.at = point;
    if (pred.value.size() != point.state.size()) throw ConfigError("config.value and config.state differ in size");
    if (!o.at("to").is_null()) throw ConfigError("config.to does not apply to prediction conversion (use to_kind)");
    const PredictionKind target = named("config.to_kind", [&] { return parse_prediction_kind(target_name); });
    const Predictiond out = convert_prediction(pred, target);
    result = {{"kind", std::string(to_string(out.kind))}, {"value", to_json(out.value)}, {"at", to_json(out.at)}};
    text = std::string(to_string(out.kind)) + " at " + std::string(to_string(out.at.param)) + ": " +
           level_symbol(out.at.param) + " = " + format_double(out.at.level) + ", " + state_symbol(out.at.param) +
           " = " + vector_text(out.at.state) + ", value = " + vector_text(out.value);
  } else {
    const std::string to_name = required("to").get<std::string>();
    const Parameterization target = named("config.to", [&] { return parse_parameterization(to_name); });
    const ParamPointd out = convert_point(point, target);
    result = to_json(out);
    text = std::string(to_string(out.param)) + ": " + level_symbol(out.param) + " = " + format_double(out.level) +
           ", " + state_symbol(out.param) + " = " + vector_text(out.state);
  }
  o.finish();
  std::cout << text << "\n";
  if (!a.common.out.empty()) {
    RunContext run("convert", a.common.out, a.common.timing);
    run.write_text("converted.json", dump_json(result));
    run.finish(cfg, std::nullopt);
  }
  return 0;
}

// ---------------------------------------------------------------- sample-forward

struct ForwardArgs {
  Common common;
  std::string param, grid;
  std::optional<int> steps, chains, record;
  std::optional<double> level_end;
};

double default_forward_end(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return 0.05;
    case Parameterization::ve_karras: return 2.0;
    case Parameterization::rectified_flow: return 0.95;
  }
  return 1.0;
}

int run_sample_forward(const ForwardArgs& a) {
  Json flags = Json::object();
  if (!a.param.empty()) flags["param"] = a.param;
  if (!a.grid.empty()) flags["grid"] = a.grid;
  if (a.steps) flags["steps"] = *a.steps;
  if (a.chains) flags["chains"] = *a.chains;
  if (a.record) flags["record"] = *a.record;
  if (a.level_end) flags["level_end"] = *a.level_end;
  const Json defaults = {{"param", "vp"}, {"x0", {1.5, -0.5}}, {"level_end", nullptr}, {"steps", 200},
                         {"grid", "level"}, {"record", 5},    {"chains", 1000},        {"seed", 0}};
  Json cfg = resolve(defaults, a.common, flags);

  JsonObject o(cfg, "config");
  const auto param_name = o.get<std::string>("param");
  const Parameterization p = named("config.param", [&] { return parse_parameterization(param_name); });
  const Vector x0 = vector_from_json(o.at("x0"), "config.x0");
  if (o.at("level_end").is_null()) cfg["level_end"] = default_forward_end(p);
  const double level_end = o.get<double>("level_end");
  const int steps = o.get<int>("steps");
  const auto grid_name = o.get<std::string>("grid");
  const int record = o.get<int>("record");
  const auto chains = o.get<long long>("chains");
  const auto seed = o.get<std::uint64_t>("seed");
  o.finish();
  if (steps < 1 || record < 1 || record > steps || chains < 2)
    throw ConfigError("need steps >= 1, 1 <= record <= steps and chains >= 2");

  const ForwardSpec spec(p);
  std::vector<double> clocks;
  if (grid_name == "level") {
    clocks = uniform_level_grid(spec, level_end, steps);
  } else if (grid_name == "clock") {
    check_level(p, level_end);
    clocks = uniform_clock_grid(spec.clock_from_level(level_end), steps);
  } else {
    throw ConfigError("config.grid must be 'level' or 'clock'");
  }
  std::vector<int> indices;
  for (int k = 1; k <= record; ++k) indices.push_back(int(std::lround(double(k) * steps / record)));
  const ForwardEnsemble e = simulate_forward(spec, x0, chains, clocks, indices, seed, a.common.workers);
  const SchemeMoments em = euler_maruyama_moments(spec, clocks);

  RunContext run("sample-forward", output_dir(a.common, "sample-forward"), a.common.timing);
  const Eigen::Index d = x0.size();
  {
    std::vector<std::string> cols{"chain_id", "level"};
    for (Eigen::Index i = 0; i < d; ++i) cols.push_back("state_" + std::to_string(i));
    CsvWriter csv(run.path("trajectories.csv"), cols);
    std::vector<CsvWriter::Cell> row(std::size_t(d) + 2);
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (Eigen::Index j = 0; j < e.states[r].cols(); ++j) {
        row[0] = static_cast<long long>(j);
        row[1] = e.levels[r];
        for (Eigen::Index i = 0; i < d; ++i) row[std::size_t(i) + 2] = e.states[r](i, j);
        csv.row(row);
      }
    csv.close();
    run.add_output("trajectories.csv");
  }
  {
    CsvWriter csv(run.path("moments.csv"),
                  {"step", "level", "coordinate", "mean", "variance", "se_mean", "se_variance", "exact_mean",
                   "exact_variance", "scheme_mean", "scheme_variance"});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const SampleMoments m = sample_moments(e.states[r]);
      const MarginalCoefficients mc = spec.marginal(e.levels[r]);
      const std::size_t k = std::size_t(indices[r]);
      for (Eigen::Index i = 0; i < d; ++i)
        csv.row({static_cast<long long>(indices[r]), e.levels[r], static_cast<long long>(i), m.mean(i),
                 m.variance(i), m.se_mean()(i), m.se_variance()(i), mc.scale * x0(i),
                 mc.noise_std * mc.noise_std, em.mean_factor[k] * x0(i), em.variance[k]});
    }
    csv.close();
    run.add_output("moments.csv");
  }
  if (a.common.gnuplot)
    run.write_text("plot.gp",
                   "# gnuplot script: sample mean and variance of coordinate 0 against the closed form\n"
                   "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'level'\n"
                   "plot 'moments.csv' using 2:($3==0?$4:1/0) with points title 'mean', \\\n"
                   "     '' using 2:($3==0?$8:1/0) with lines title 'exact mean', \\\n"
                   "     '' using 2:($3==0?$5:1/0) with points title 'variance', \\\n"
                   "     '' using 2:($3==0?$9:1/0) with lines title 'exact variance'\n");
  run.finish(cfg, seed);
  return 0;
}

// ---------------------------------------------------------------- sample-reverse

struct ReverseArgs {
  Common common;
  std::string model_type, field, grid, integrator;
  std::optional<int> steps, checkpoints;
  std::optional<long long> chains;
};

int run_sample_reverse(const ReverseArgs& a) {
  Json flags = Json::object();
  if (!a.model_type.empty()) flags["model_type"] = a.model_type;
  if (!a.field.empty()) flags["field"] = a.field;
  if (!a.grid.empty()) flags["grid"] = a.grid;
  if (!a.integrator.empty()) flags["integrator"] = a.integrator;
  if (a.steps) flags["steps"] = *a.steps;
  if (a.chains) flags["chains"] = *a.chains;
  if (a.checkpoints) flags["checkpoints"] = *a.checkpoints;
  const Json defaults = {{"model_type", "vp-sde"},  {"field", "oracle"}, {"data", nullptr},
                         {"steps", 400},            {"chains", 10000},   {"grid", "uniform"},
                         {"karras_rho", 7.0},       {"integrator", "euler"}, {"start_clock", nullptr},
                         {"checkpoints", 5},        {"seed", 0}};
  Json cfg = resolve(defaults, a.common, flags, {"data"});

  JsonObject o(cfg, "config");
  const auto row_name = o.get<std::string>("model_type");
  const ModelType row = named("config.model_type", [&] { return parse_model_type(row_name); });
  const auto field_name = o.get<std::string>("field");
  std::optional<Checkpoint> ckpt;
  if (field_name.rfind("checkpoint:", 0) == 0) ckpt = load_checkpoint(field_name.substr(11));
  // Without explicit data, a checkpoint supplies the data it was trained on.
  if (o.at("data").is_null())
    cfg["data"] = ckpt && ckpt->training.contains("data") ? ckpt->training["data"] : bimodal_json(2.0, 0.1);
  const GaussianMixture data = mixture_from_json(o.at("data"), "config.data");
  GenerateOptions gen;
  gen.dim = data.dim();
  gen.steps = o.get<int>("steps");
  gen.n_chains = o.get<long long>("chains");
  const auto grid_name = o.get<std::string>("grid");
  gen.grid = named("config.grid", [&] { return parse_grid_kind(grid_name); });
  gen.karras_rho = o.get<double>("karras_rho");
  const auto integrator_name = o.get<std::string>("integrator");
  gen.integrator = named("config.integrator", [&] { return parse_integrator(integrator_name); });
  if (o.at("start_clock").is_null()) cfg["start_clock"] = default_start_clock(row, data_std_bound(data));
  const double start_clock = o.get<double>("start_clock");
  const int checkpoints = o.get<int>("checkpoints");
  gen.seed = o.get<std::uint64_t>("seed");
  gen.workers = a.common.workers;
  o.finish();
  if (gen.steps < 0 || gen.n_chains < 2 || checkpoints < 1) throw ConfigError("need steps >= 0, chains >= 2, checkpoints >= 1");

  Field field;
  if (field_name == "oracle") {
    field = oracle_field(data, native_kind(param_of(row)));
  } else if (ckpt) {
    if (ckpt->model.dim() != data.dim())
      throw ConfigError("checkpoint dimension " + std::to_string(ckpt->model.dim()) + " differs from config.data (" +
                        std::to_string(data.dim()) + ")");
    field = model_field(ckpt->model);
  } else {
    throw ConfigError("config.field must be 'oracle' or 'checkpoint:<path>'");
  }
  const ReverseSpec spec(row, field, start_clock);
  if (checkpoints == 1 || gen.steps == 0) {
    gen.checkpoints = {gen.steps};
  } else {
    for (int c = 0; c < checkpoints; ++c)
      gen.checkpoints.push_back(int(std::lround(double(c) * gen.steps / double(checkpoints - 1))));
  }
  const GenerateResult out = generate(spec, gen);

  RunContext run("sample-reverse", output_dir(a.common, "sample-reverse"), a.common.timing);
  write_states(run, "samples.csv", out.states);
  {
    CsvWriter csv(run.path("moments.csv"), {"step", "t_rev", "level", "coordinate", "mean", "variance", "se_mean",
                                            "se_variance", "exact_mean", "exact_variance"});
    for (const EnsembleSnapshot& snap : out.snapshots) {
      const SampleMoments m = sample_moments(snap.states);
      const PerturbedMixture pm = perturb(data, spec.param(), snap.level);
      const Vector mean = pm.marginal().mixture_mean();
      const Vector var = pm.marginal().mixture_covariance().diagonal();
      for (Eigen::Index i = 0; i < data.dim(); ++i)
        csv.row({static_cast<long long>(snap.step), snap.t_rev, snap.level, static_cast<long long>(i), m.mean(i),
                 m.variance(i), m.se_mean()(i), m.se_variance()(i), mean(i), var(i)});
    }
    csv.close();
    run.add_output("moments.csv");
  }
  if (a.common.gnuplot)
    run.write_text("plot.gp",
                   "# gnuplot script: histogram of coordinate 0 of the generated samples\n"
                   "set datafile separator ','\nset key autotitle columnhead\nbin(x) = 0.05 * floor(x / 0.05)\n"
                   "plot 'samples.csv' using (bin($2)):(1.0) smooth frequency with boxes title 'samples'\n");
  run.finish(cfg, gen.seed);
  return 0;
}

// ---------------------------------------------------------------- langevin

struct LangevinArgs {
  Common common;
  std::string row;
  std::optional<int> steps, trace_every;
  std::optional<long long> chains;
  std::optional<double> dtau, level;
};

int run_langevin_command(const LangevinArgs& a) {
  Json flags = Json::object();
  if (!a.row.empty()) flags["row"] = a.row;
  if (a.steps) flags["steps"] = *a.steps;
  if (a.trace_every) flags["trace_every"] = *a.trace_every;
  if (a.chains) flags["chains"] = *a.chains;
  if (a.dtau) flags["dtau"] = *a.dtau;
  if (a.level) flags["level"] = *a.level;
  const Json defaults = {{"target", gaussian_json(0.0, 1.0)},
                         {"row", "vp-sde"},
                         {"level", nullptr},
                         {"init", {{"mean", {5.0}}, {"std", 1.0}}},
                         {"dtau", 1e-3},
                         {"steps", 10000},
                         {"chains", 10000},
                         {"trace_every", 100},
                         {"seed", 0}};
  Json cfg = resolve(defaults, a.common, flags, {"target"});

  JsonObject o(cfg, "config");
  const GaussianMixture target = mixture_from_json(o.at("target"), "config.target");
  const auto row_name = o.get<std::string>("row");
  const ModelType row = named("config.row", [&] { return parse_model_type(row_name); });
  const Parameterization p = param_of(row);
  if (o.at("level").is_null()) cfg["level"] = clean_level(p);
  const double level = o.get<double>("level");
  JsonObject init = o.object("init");
  const Vector init_mean = vector_from_json(init.at("mean"), init.path_of("mean"));
  const double init_std = init.get<double>("std");
  init.finish();
  const double dtau = o.get<double>("dtau");
  const int steps = o.get<int>("steps");
  const auto chains = o.get<long long>("chains");
  const int trace_every = o.get<int>("trace_every");
  const auto seed = o.get<std::uint64_t>("seed");
  o.finish();
  if (init_mean.size() != target.dim()) throw ConfigError("config.init.mean must have the target's dimension");
  if (chains < 2 || steps < 0 || trace_every < 0 || !(init_std >= 0.0))
    throw ConfigError("need chains >= 2, steps >= 0, trace_every >= 0 and init.std >= 0");
  check_level(p, level);

  // The target is the data pushed to `level` in the row's coordinates; the
  // rate g is frozen at that level so the target stays fixed.
  const PerturbedMixture pm = perturb(target, p, level);
  const double g = langevin_rate(row, split_tau(row, level));
  const LangevinSpec spec{[pm](const Matrix& x, double) -> Matrix { return pm.score(x); },
                          [g](double) { return g; }, p, level};
  // Initial draws use streams (seed, chains + j), disjoint from the dynamics.
  Matrix x0(target.dim(), chains);
  for (Eigen::Index j = 0; j < chains; ++j) {
    RngStream rng(seed, std::uint64_t(chains + j));
    x0.col(j) = init_mean + init_std * rng.normal_vector(target.dim());
  }
  const LangevinRun out = run_langevin(spec, x0, split_tau(row, level), dtau, steps, seed, trace_every, a.common.workers);

  RunContext run("langevin", output_dir(a.common, "langevin"), a.common.timing);
  write_states(run, "samples.csv", out.states);
  {
    const Vector mean = pm.marginal().mixture_mean();
    const Vector var = pm.marginal().mixture_covariance().diagonal();
    CsvWriter csv(run.path("trace.csv"),
                  {"step", "tau", "coordinate", "mean", "variance", "exact_mean", "exact_variance"});
    for (const MomentTracePoint& pt : out.trace)
      for (Eigen::Index i = 0; i < target.dim(); ++i)
        csv.row({static_cast<long long>(pt.step), pt.tau, static_cast<long long>(i), pt.mean(i), pt.variance(i),
                 mean(i), var(i)});
    csv.close();
    run.add_output("trace.csv");
  }
  if (a.common.gnuplot)
    run.write_text("plot.gp",
                   "# gnuplot script: moment trace of coordinate 0\n"
                   "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'step'\n"
                   "plot 'trace.csv' using 1:($3==0?$4:1/0) with lines title 'mean', \\\n"
                   "     '' using 1:($3==0?$5:1/0) with lines title 'variance', \\\n"
                   "     '' using 1:($3==0?$7:1/0) with lines dashtype 2 title 'target variance'\n");
  run.finish(cfg, seed);
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string model_type, weight;
  std::optional<int> steps;
  std::optional<long long> batch_size;
  std::optional<double> learning_rate;
};

Json default_train_config() {
  const TrainingExperiment ex = default_training_experiment();
  const TrainConfig& t = ex.train;
  Json hidden = Json::array();
  for (int h : ex.model.hidden) hidden.push_back(h);
  return {{"data", to_json(ex.data)},
          {"model_type", std::string(to_string(ex.loss.model_type))},
          {"weight", ex.loss.weight_mode == WeightMode::custom ? ex.loss.custom_name
                                                                : std::string(to_string(ex.loss.weight_mode))},
          {"model",
           {{"kind", nullptr},
            {"hidden", hidden},
            {"activation", std::string(to_string(ex.model.activation))},
            {"level_embedding", ex.model.level_embedding},
            {"bias", ex.model.bias},
            {"seed", ex.model_seed}}},
          {"optimizer",
           {{"kind", std::string(to_string(t.optimizer))},
            {"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"epsilon", t.epsilon}}},
          {"steps", t.steps},
          {"batch_size", t.batch_size},
          {"levels", {{"min", nullptr}, {"max", nullptr}}},
          {"trace_every", t.trace_every},
          {"divergence_threshold", t.divergence_threshold},
          {"evaluation", {{"levels", nullptr}, {"samples", 20000}}},
          {"seed", t.seed}};
}

std::vector<double> default_evaluation_levels(Parameterization p) {
  switch (p) {
    case Parameterization::vp: return {0.2, 0.5, 0.8};
    case Parameterization::ve_karras: return {0.5, 1.0, 2.0};
    case Parameterization::rectified_flow: return {0.25, 0.5, 0.75};
  }
  return {};
}

int run_train(const TrainArgs& a) {
  Json flags = Json::object();
  if (!a.model_type.empty()) flags["model_type"] = a.model_type;
  if (!a.weight.empty()) flags["weight"] = a.weight;
  if (a.steps) flags["steps"] = *a.steps;
  if (a.batch_size) flags["batch_size"] = *a.batch_size;
  if (a.learning_rate) flags["optimizer"] = {{"learning_rate", *a.learning_rate}};
  Json cfg = resolve(default_train_config(), a.common, flags, {"data"});

  JsonObject o(cfg, "config");
  const GaussianMixture data = mixture_from_json(o.at("data"), "config.data");
  const auto row_name = o.get<std::string>("model_type");
  const ModelType row = named("config.model_type", [&] { return parse_model_type(row_name); });
  const auto weight = o.get<std::string>("weight");
  LossSpec loss{row, WeightMode::paper, {}, {}};
  if (weight == "paper" || weight == "uniform") {
    loss.weight_mode = parse_weight_mode(weight);
  } else {
    loss = named("config.weight", [&] { return custom_loss(row, weight); });
  }

  JsonObject mo = o.object("model");
  if (mo.at("kind").is_null()) cfg["model"]["kind"] = std::string(to_string(native_kind(param_of(row))));
  const auto kind_name = mo.get<std::string>("kind");
  const PredictionKind kind = named(mo.path_of("kind"), [&] { return parse_prediction_kind(kind_name); });
  MLPConfig mc;
  mc.dim = data.dim();
  mc.hidden = mo.get<std::vector<int>>("hidden");
  const auto act_name = mo.get<std::string>("activation");
  mc.activation = named(mo.path_of("activation"), [&] { return parse_activation(act_name); });
  mc.level_embedding = mo.get<bool>("level_embedding");
  mc.bias = mo.get<bool>("bias");
  const auto model_seed = mo.get<std::uint64_t>("seed");
  mo.finish();

  TrainConfig tc;
  JsonObject oo = o.object("optimizer");
  const auto opt_name = oo.get<std::string>("kind");
  tc.optimizer = named(oo.path_of("kind"), [&] { return parse_optimizer(opt_name); });
  tc.learning_rate = oo.get<double>("learning_rate");
  tc.momentum = oo.get<double>("momentum");
  tc.beta1 = oo.get<double>("beta1");
  tc.beta2 = oo.get<double>("beta2");
  tc.epsilon = oo.get<double>("epsilon");
  oo.finish();
  tc.steps = o.get<int>("steps");
  tc.batch_size = o.get<long long>("batch_size");
  JsonObject lo = o.object("levels");
  if (lo.at("min").is_null() != lo.at("max").is_null())
    throw ConfigError("config.levels needs both min and max, or neither");
  if (!lo.at("min").is_null()) tc.levels = {lo.get<double>("min"), lo.get<double>("max")};
  lo.finish();
  tc.trace_every = o.get<int>("trace_every");
  tc.divergence_threshold = o.get<double>("divergence_threshold");
  tc.seed = o.get<std::uint64_t>("seed");
  JsonObject eo = o.object("evaluation");
  if (eo.at("levels").is_null()) {
    Json levels = Json::array();
    for (double l : default_evaluation_levels(native_param(kind))) levels.push_back(l);
    cfg["evaluation"]["levels"] = levels;
  }
  const auto eval_levels = eo.get<std::vector<double>>("levels");
  const auto eval_samples = eo.get<long long>("samples");
  eo.finish();
  o.finish();
  if (mc.hidden.empty() == false)
    for (int h : mc.hidden)
      if (h < 1) throw ConfigError("config.model.hidden widths must be >= 1");
  if (eval_samples < 10) throw ConfigError("config.evaluation.samples must be >= 10");

  const MLPModel init = MLPModel::create(kind, mc, model_seed);
  const TrainResult result = train(init, data, loss, tc);
  cfg["levels"] = {{"min", result.levels.min}, {"max", result.levels.max}};

  RunContext run("train", output_dir(a.common, "train"), a.common.timing);
  save_checkpoint(run.path("checkpoint.json"), {result.model, loss, cfg});
  run.add_output("checkpoint.json");
  {
    CsvWriter csv(run.path("loss_trace.csv"), {"step", "loss"});
    for (const LossTracePoint& pt : result.trace) csv.row({static_cast<long long>(pt.step), pt.loss});
    csv.close();
    run.add_output("loss_trace.csv");
  }
  {
    CsvWriter csv(run.path("field_error.csv"), {"param", "level", "relative_l2", "n_used"});
    for (std::size_t i = 0; i < eval_levels.size(); ++i) {
      const FieldErrorReport e = field_error(result.model, data, eval_levels[i], eval_samples, tc.seed + 1 + i);
      csv.row({std::string(to_string(native_param(kind))), e.level, e.relative_l2, static_cast<long long>(e.n_used)});
    }
    csv.close();
    run.add_output("field_error.csv");
  }
  if (a.common.gnuplot)
    run.write_text("plot.gp",
                   "# gnuplot script: training loss\n"
                   "set datafile separator ','\nset key autotitle columnhead\nset logscale y\nset xlabel 'step'\n"
                   "plot 'loss_trace.csv' using 1:2 with lines title 'mean batch loss'\n");
  run.finish(cfg, tc.seed);
  return 0;
}

// ---------------------------------------------------------------- fp-solve

struct FPArgs {
  Common common;
  std::optional<int> cells;
  std::optional<double> horizon, dt;
  std::string flux, time;
};

int run_fp_solve(const FPArgs& a) {
  Json flags = Json::object();
  if (a.cells) flags["grid"] = {{"cells", *a.cells}};
  if (a.horizon) flags["horizon"] = *a.horizon;
  if (a.dt) flags["dt"] = *a.dt;
  if (!a.flux.empty()) flags["flux"] = a.flux;
  if (!a.time.empty()) flags["time"] = a.time;
  const Json defaults = {
      {"grid", {{"x_min", -12.0}, {"x_max", 12.0}, {"cells", 400}}},
      {"operator", {{"type", "ou"}, {"rate", 1.0}, {"drift", 0.0}, {"g", std::sqrt(2.0)}}},
      {"flux", "sg"},
      {"time", "explicit"},
      {"p", {{"mean", 2.0}, {"variance", 0.5}}},
      {"q", {{"mean", -1.0}, {"variance", 2.0}}},
      {"horizon", 2.0},
      {"dt", nullptr},
      {"record_every", nullptr},
      {"density_snapshots", 5},
  };
  Json cfg = resolve(defaults, a.common, flags);
  cfg.erase("seed");

  JsonObject o(cfg, "config");
  JsonObject go = o.object("grid");
  const Grid1D grid(go.get<double>("x_min"), go.get<double>("x_max"), go.get<int>("cells"));
  go.finish();
  JsonObject po = o.object("operator");
  const auto type = po.get<std::string>("type");
  const double rate = po.get<double>("rate"), drift = po.get<double>("drift"), g = po.get<double>("g");
  po.finish();
  FPOperator op;
  if (type == "ou") {
    op = ou_operator(rate, g);
  } else if (type == "constant") {
    op = constant_operator(drift, g);
  } else {
    throw ConfigError("config.operator.type must be 'ou' or 'constant'");
  }
  const auto flux_name = o.get<std::string>("flux");
  op.flux = named("config.flux", [&] { return parse_flux_scheme(flux_name); });
  const auto time_name = o.get<std::string>("time");
  const TimeScheme scheme = named("config.time", [&] { return parse_time_scheme(time_name); });
  auto density = [&](const std::string& key) {
    JsonObject d = o.object(key);
    const double mean = d.get<double>("mean"), var = d.get<double>("variance");
    d.finish();
    return named("config." + key, [&] { return gaussian_density(grid, mean, var); });
  };
  const GridDensity p0 = density("p"), q0 = density("q");
  const double horizon = o.get<double>("horizon");
  if (o.at("dt").is_null()) {
    const double limit = max_stable_dt(op, grid, 0.0);
    if (!std::isfinite(limit)) throw ConfigError("config.dt is required when the operator has no stability bound");
    const int n = int(std::ceil(horizon / (0.4 * limit)));
    cfg["dt"] = horizon / n;
  }
  const double dt = o.get<double>("dt");
  if (o.at("record_every").is_null()) cfg["record_every"] = std::max(1, int(0.02 / dt));
  const int record_every = o.get<int>("record_every");
  const int snapshots = o.get<int>("density_snapshots");
  o.finish();
  if (!(horizon > 0.0) || !(dt > 0.0) || record_every < 1 || snapshots < 0)
    throw ConfigError("need horizon > 0, dt > 0, record_every >= 1 and density_snapshots >= 0");

  const KLTrace trace = kl_trace(op, p0, q0, horizon, dt, scheme, record_every);
  if (trace.accuracy_warning)
    std::cerr << "warning: " << format_double(trace.max_underflow_mass)
              << " of p's mass sits where a density underflows; KL values are unreliable\n";

  RunContext run("fp-solve", output_dir(a.common, "fp-solve"), a.common.timing);
  {
    CsvWriter csv(run.path("kl_trace.csv"),
                  {"t", "kl", "dkl_dt", "objective", "drift_dissipation", "relative_defect"});
    for (const KLTracePoint& pt : trace.points) {
      const double defect = pt.objective > 0.0 ? std::abs(pt.dkl_dt + pt.objective) / pt.objective : 0.0;
      csv.row({pt.t, pt.kl, pt.dkl_dt, pt.objective, pt.drift_dissipation, defect});
    }
    csv.close();
    run.add_output("kl_trace.csv");
  }
  if (snapshots > 0) {
    const int steps = int(std::lround(horizon / dt));
    std::vector<int> at;
    for (int k = 0; k < snapshots; ++k)
      at.push_back(snapshots == 1 ? steps : int(std::lround(double(k) * steps / double(snapshots - 1))));
    CsvWriter csv(run.path("densities.csv"), {"t", "x", "p", "q"});
    GridDensity p = p0, q = q0;
    std::size_t next = 0;
    for (int k = 0; k <= steps && next < at.size(); ++k) {
      while (next < at.size() && at[next] == k) {
        for (int i = 0; i < grid.cells(); ++i) csv.row({k * dt, grid.center(i), p.values(i), q.values(i)});
        ++next;
      }
      if (k < steps) {
        p = fp_step(op, p, k * dt, dt, scheme);
        q = fp_step(op, q, k * dt, dt, scheme);
      }
    }
    csv.close();
    run.add_output("densities.csv");
  }
  if (a.common.gnuplot)
    run.write_text("plot.gp",
                   "# gnuplot script: KL decay against the objective\n"
                   "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n"
                   "plot 'kl_trace.csv' using 1:2 with lines title 'KL', \\\n"
                   "     '' using 1:(-$3) with lines title '-dKL/dt', \\\n"
                   "     '' using 1:4 with points title 'L_t'\n");
  run.finish(cfg, std::nullopt);
  return 0;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  Common common;
  std::vector<std::string> suites;
  bool quick = false;
};

int run_verify(const VerifyArgs& a) {
  Json flags = Json::object();
  if (!a.suites.empty()) flags["suites"] = a.suites;
  if (a.quick) flags["quick"] = true;
  Json all = Json::array();
  for (const std::string& s : suite_names()) all.push_back(s);
  Json cfg = resolve({{"suites", all}, {"quick", false}, {"seed", 0}}, a.common, flags);

  JsonObject o(cfg, "config");
  const auto suites = o.get<std::vector<std::string>>("suites");
  SuiteOptions so;
  so.quick = o.get<bool>("quick");
  so.seed = o.get<std::uint64_t>("seed");
  so.workers = a.common.workers;
  o.finish();
  for (const std::string& s : suites)
    if (std::find(suite_names().begin(), suite_names().end(), s) == suite_names().end())
      throw ConfigError("unknown suite '" + s + "'");

  RunContext run("verify", output_dir(a.common, "verify"), a.common.timing);
  std::vector<PropertyResult> results;
  for (const std::string& s : suites) {
    std::vector<PropertyResult> r = run_suite(s, so);
    for (const PropertyResult& p : r)
      std::cout << (p.pass ? "PASS  " : "FAIL  ") << p.suite << " | " << p.name << " | " << p.detail << "\n"
                << std::flush;
    results.insert(results.end(), r.begin(), r.end());
  }
  CsvWriter csv(run.path("results.csv"), {"suite", "property", "pass", "detail"});
  std::size_t failed = 0;
  for (const PropertyResult& p : results) {
    csv.row({p.suite, p.name, static_cast<long long>(p.pass), p.detail});
    if (!p.pass) ++failed;
  }
  csv.close();
  run.add_output("results.csv");
  run.finish(cfg, so.seed);
  std::cout << results.size() - failed << "/" << results.size() << " properties passed\n";
  if (failed > 0) {
    std::cerr << "failed properties:\n";
    for (const PropertyResult& p : results)
      if (!p.pass) std::cerr << "  " << p.suite << ": " << p.name << " (" << p.detail << ")\n";
    return kExitVerify;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified Langevin view of diffusion models: conversions, sampling, training and verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", LANGSPLIT_VERSION);

  ConvertArgs convert;
  CLI::App* c = app.add_subcommand("convert", "convert a point or a prediction between parameterizations");
  add_common(c, convert.common, false);
  c->add_option("--from", convert.from, "parameterization of the input point: vp, ve, rf");
  c->add_option("--to", convert.to, "target parameterization (point conversion)");
  c->add_option("--level,--alpha,--sigma,--s", convert.level, "noise level of the input point");
  c->add_option("--state", convert.state, "state components")->delimiter(',');
  c->add_option("--kind", convert.kind, "prediction kind of --value: score, noise, velocity");
  c->add_option("--value", convert.value, "prediction components")->delimiter(',');
  c->add_option("--to-kind", convert.to_kind, "target prediction kind");

  ForwardArgs fwd;
  CLI::App* f = app.add_subcommand("sample-forward", "simulate the forward SDE from a point");
  add_common(f, fwd.common);
  f->add_option("--param", fwd.param, "vp, ve, rf");
  f->add_option("--grid", fwd.grid, "level (uniform in the noise level) or clock (uniform in time)");
  f->add_option("--steps", fwd.steps, "grid steps");
  f->add_option("--chains", fwd.chains, "number of chains");
  f->add_option("--record", fwd.record, "number of evenly spaced recorded levels");
  f->add_option("--level-end", fwd.level_end, "final noise level");

  ReverseArgs rev;
  CLI::App* r = app.add_subcommand("sample-reverse", "generate data with one of the reverse processes");
  add_common(r, rev.common);
  r->add_option("--model-type", rev.model_type, "vp-sde, vp-ode, ve, rf");
  r->add_option("--field", rev.field, "oracle or checkpoint:<path>");
  r->add_option("--steps", rev.steps, "reverse steps");
  r->add_option("--chains", rev.chains, "number of chains");
  r->add_option("--grid", rev.grid, "uniform or karras");
  r->add_option("--integrator", rev.integrator, "euler or heun (ODE rows)");
  r->add_option("--checkpoints", rev.checkpoints, "evenly spaced moment checkpoints");

  LangevinArgs lan;
  CLI::App* l = app.add_subcommand("langevin", "run Langevin dynamics toward a fixed target");
  add_common(l, lan.common);
  l->add_option("--row", lan.row, "vp-sde, vp-ode, ve, rf (sets the rate g)");
  l->add_option("--level", lan.level, "noise level of the target in the row's coordinates");
  l->add_option("--dtau", lan.dtau, "step size");
  l->add_option("--steps", lan.steps, "number of steps");
  l->add_option("--chains", lan.chains, "number of chains");
  l->add_option("--trace-every", lan.trace_every, "moment trace interval (0: start and end only)");

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "train a small MLP with a denoising loss");
  add_common(t, tr.common);
  t->add_option("--model-type", tr.model_type, "vp-sde, ve, rf");
  t->add_option("--weight", tr.weight, "paper, uniform or sigma2");
  t->add_option("--steps", tr.steps, "optimizer steps");
  t->add_option("--batch-size", tr.batch_size, "samples per step");
  t->add_option("--learning-rate", tr.learning_rate, "optimizer step size");

  FPArgs fp;
  CLI::App* p = app.add_subcommand("fp-solve", "evolve two densities with the Fokker-Planck equation and trace KL");
  add_common(p, fp.common, false);
  p->add_option("--cells", fp.cells, "grid cells");
  p->add_option("--horizon", fp.horizon, "final time");
  p->add_option("--dt", fp.dt, "time step");
  p->add_option("--flux", fp.flux, "sg or upwind");
  p->add_option("--time", fp.time, "explicit or implicit");

  VerifyArgs ver;
  CLI::App* v = app.add_subcommand("verify", "run property suites and print a pass/fail table");
  add_common(v, ver.common);
  v->add_option("--suite", ver.suites, "suite name (repeatable; default all)");
  v->add_flag("--quick", ver.quick, "smaller ensembles; the training suite becomes a smoke run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (c->parsed()) return run_convert(convert);
    if (f->parsed()) return run_sample_forward(fwd);
    if (r->parsed()) return run_sample_reverse(rev);
    if (l->parsed()) return run_langevin_command(lan);
    if (t->parsed()) return run_train(tr);
    if (p->parsed()) return run_fp_solve(fp);
    if (v->parsed()) return run_verify(ver);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
