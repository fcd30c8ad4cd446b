#include "doctest.h"

#include "langsplit/io.hpp"
#include "langsplit/rng.hpp"

#include <cstdlib>
#include <filesystem>
#include <limits>

using namespace langsplit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("langsplit_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int config_line(const std::string& text) {
  try {
    parse_json(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.line * 1000 + e.column;
  }
  return 0;
}

}  // namespace

TEST_CASE("doubles print in their shortest round-trip form") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.4142135623730951) == "1.4142135623730951");
  CHECK(format_double(-3.0) == "-3");
  CHECK(format_double(5381988812436558848.0) == "5.381988812436559e+18");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  RngStream rng(4, 0);
  for (int i = 0; i < 10000; ++i) {
    const double v = rng.normal() * std::pow(10.0, 40.0 * rng.uniform() - 20.0);
    const std::string s = format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
    const std::string mantissa = s.substr(0, s.find('e'));
    int digits = 0;
    bool leading = true;
    for (char c : mantissa) {
      if (c < '0' || c > '9') continue;
      if (c != '0') leading = false;
      if (!leading) ++digits;
    }
    CHECK(digits <= 17);
  }
}

TEST_CASE("parse errors carry line and column") {
  CHECK(config_line("{\n  \"a\": 1,\n  \"b\": ]\n}") == 3 * 1000 + 8);
  // Reported at the last character of the offending token.
  CHECK(config_line("{\"a\": 1 \"b\": 2}") == 1 * 1000 + 11);
  CHECK(config_line("// comment\n{\"a\": 1}") == 0);
  try {
    parse_json("{\n  \"x\": tru\n}", "run.json");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("run.json:2:", 0) == 0);
  }
}

TEST_CASE("strict objects reject unknown keys") {
  const Json j = parse_json(R"({"steps": 4, "seed": 2, "stepz": 1})", "cfg");
  JsonObject o(j, "config");
  CHECK(o.get<int>("steps") == 4);
  CHECK(o.get<int>("seed") == 2);
  CHECK(o.get<double>("dt", 0.25) == 0.25);
  try {
    o.finish();
    FAIL("expected unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "unknown key config.stepz");
  }
  JsonObject bad(j, "config");
  CHECK_THROWS_AS(bad.get<std::string>("steps"), ConfigError);
  CHECK_THROWS_AS(bad.get<int>("missing"), ConfigError);
  CHECK_THROWS_AS(JsonObject(Json::array(), "x"), ConfigError);
}

TEST_CASE("points and mixtures round-trip exactly") {
  ParamPointd p{Parameterization::rectified_flow, Vector(3), 0.3141592653589793};
  p.state << 1.0 / 3.0, -2e-300, 7.5e12;
  const Json pj = parse_json(dump_json(to_json(p)), "p");
  const ParamPointd q = point_from_json(pj);
  CHECK(q.param == p.param);
  CHECK(q.level == p.level);
  CHECK((q.state.array() == p.state.array()).all());
  CHECK_THROWS_AS(point_from_json(parse_json(R"({"param": "vp", "level": 1.5, "state": [1]})", "p")), DomainError);
  CHECK_THROWS_AS(point_from_json(parse_json(R"({"param": "ddpm", "level": 0.5, "state": [1]})", "p")), ConfigError);

  Matrix cov(2, 2);
  cov << 0.7, 0.1 / 3.0, 0.1 / 3.0, 0.45;
  Vector w(2);
  w << 0.3, 0.7;
  const GaussianMixture gm(w, {Vector::Constant(2, -1.0 / 7.0), Vector::Constant(2, 2.5)}, {cov, 0.2 * cov});
  const GaussianMixture back = mixture_from_json(parse_json(dump_json(to_json(gm)), "gm"));
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.weights()(Eigen::Index(i)) == gm.weights()(Eigen::Index(i)));
    CHECK((back.mean(i).array() == gm.mean(i).array()).all());
    CHECK((back.covariance(i).array() == gm.covariance(i).array()).all());
  }
  const GaussianMixture iso = mixture_from_json(parse_json(
      R"({"components": [{"weight": 0.5, "mean": [-2], "variance": 0.1}, {"weight": 0.5, "mean": 2, "variance": 0.1}]})",
      "gm"));
  CHECK(iso.covariance(1)(0, 0) == 0.1);
  CHECK_THROWS_AS(mixture_from_json(parse_json(R"({"components": [{"weight": 1, "mean": [0], "variance": -1}]})", "g")),
                  ConfigError);
  CHECK_THROWS_AS(
      mixture_from_json(parse_json(R"({"components": [{"weight": 1, "mean": [0], "variance": 1, "skew": 0}]})", "g")),
      ConfigError);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const fs::path dir = scratch_dir("ckpt");
  for (bool bias : {true, false}) {
    MLPConfig cfg;
    cfg.dim = 2;
    cfg.hidden = {5, 3};
    cfg.activation = Activation::tanh;
    cfg.bias = bias;
    cfg.level_embedding = bias;
    MLPModel model = MLPModel::create(PredictionKind::noise, cfg, 77);
    RngStream rng(1, 2);
    model.set_parameters(rng.normal_vector(model.parameter_count()));
    Checkpoint ckpt{model, custom_loss(ModelType::ve_karras, "sigma2"), Json{{"steps", 10}}};
    save_checkpoint(dir / "m.json", ckpt);
    const Checkpoint back = load_checkpoint(dir / "m.json");
    CHECK(back.model.prediction_kind() == PredictionKind::noise);
    CHECK(back.model.level_embedding() == bias);
    CHECK((back.model.parameters().array() == model.parameters().array()).all());
    CHECK(back.loss.weight_mode == WeightMode::custom);
    CHECK(back.loss.custom_name == "sigma2");
    CHECK(loss_weight(back.loss, 2.0) == loss_weight(ckpt.loss, 2.0));
    CHECK(back.training["steps"] == 10);
    Matrix x(2, 4);
    x << 0.1, 0.2, -3.0, 4.0, 1.0, -1.0, 0.5, 0.25;
    CHECK((back.model.predict(x, 0.7).array() == model.predict(x, 0.7).array()).all());
    // Saving the loaded checkpoint gives the same bytes.
    save_checkpoint(dir / "m2.json", back);
    CHECK(read_text_file(dir / "m.json") == read_text_file(dir / "m2.json"));
  }
  Json j = checkpoint_to_json({MLPModel::create(PredictionKind::score, MLPConfig{}, 1), LossSpec{}, Json()});
  j["layers"][0]["weight"].erase(0);
  CHECK_THROWS_AS(checkpoint_from_json(j), ConfigError);
  j = checkpoint_to_json({MLPModel::create(PredictionKind::score, MLPConfig{}, 1), LossSpec{}, Json()});
  j["format"] = "other";
  CHECK_THROWS_AS(checkpoint_from_json(j), ConfigError);
  LossSpec unnamed{ModelType::vp_sde, WeightMode::custom, [](double) { return 1.0; }, ""};
  CHECK_THROWS_AS(checkpoint_to_json({MLPModel::create(PredictionKind::score, MLPConfig{}, 1), unnamed, Json()}),
                  ArgumentError);
}

TEST_CASE("CSV files round-trip") {
  const fs::path dir = scratch_dir("csv");
  {
    CsvWriter w(dir / "t.csv", {"step", "name", "value"});
    w.row({0LL, std::string("a"), 0.1});
    w.row({12LL, std::string("b"), -1.0 / 3.0});
    CHECK_THROWS_AS(w.row({1LL}), ArgumentError);
    w.close();
  }
  CHECK(read_text_file(dir / "t.csv") == "step,name,value\n0,a,0.1\n12,b,-0.3333333333333333\n");
  const CsvTable t = read_csv(dir / "t.csv");
  CHECK(t.rows.size() == 2);
  CHECK(std::strtod(t.rows[1][t.column("value")].c_str(), nullptr) == -1.0 / 3.0);
  CHECK_THROWS_AS(t.column("missing"), ArgumentError);
}

TEST_CASE("CSV text fields with separators are quoted and read back") {
  const fs::path dir = scratch_dir("csv-quote");
  const std::string tricky = "sd 0.1 vs bound 0.2, \"score\" model";
  {
    CsvWriter w(dir / "q.csv", std::vector<std::string>{"suite", "detail"});
    w.row({std::string("dsm"), tricky});
    w.row({std::string("plain"), std::string("x")});
    w.close();
  }
  CHECK(read_text_file(dir / "q.csv") ==
        "suite,detail\ndsm,\"sd 0.1 vs bound 0.2, \"\"score\"\" model\"\nplain,x\n");
  const CsvTable t = read_csv(dir / "q.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == tricky);
  CHECK(t.rows[1][1] == "x");
}
