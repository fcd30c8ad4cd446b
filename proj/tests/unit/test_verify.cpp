#include "doctest.h"

#include "langsplit/verify.hpp"

#include <algorithm>

using namespace langsplit;

TEST_CASE("suite names are unique and unknown suites are rejected") {
  std::vector<std::string> names = suite_names();
  CHECK(names.size() == 12);
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK_THROWS_AS(run_suite("nope", {}), ArgumentError);
}

TEST_CASE("quick suites pass and label their results") {
  SuiteOptions o;
  o.quick = true;
  for (const char* suite : {"core", "conversions", "oracle", "split", "gradients", "fokker-planck"}) {
    const std::vector<PropertyResult> r = run_suite(suite, o);
    REQUIRE(!r.empty());
    for (const PropertyResult& p : r) {
      INFO(p.suite, ": ", p.name, " (", p.detail, ")");
      CHECK(p.suite == suite);
      CHECK(!p.detail.empty());
      CHECK(p.pass);
    }
    CHECK(all_passed(r));
  }
}

TEST_CASE("suite results depend only on the seed, not on the worker count") {
  SuiteOptions a, b;
  a.quick = b.quick = true;
  b.workers = 3;
  const auto ra = run_suite("forward", a), rb = run_suite("forward", b);
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(ra[i].detail == rb[i].detail);
}

TEST_CASE("all_passed") {
  CHECK(all_passed({}));
  CHECK(!all_passed({{"s", "a", true, "x"}, {"s", "b", false, "y"}}));
}

TEST_CASE("training experiment defaults") {
  const TrainingExperiment ex = default_training_experiment();
  CHECK(ex.data.dim() == 2);
  CHECK(ex.model.hidden == std::vector<int>{64, 64});
  CHECK(ex.loss.model_type == ModelType::vp_sde);
  CHECK(ex.train.batch_size == 1024);
  CHECK(ex.mid_levels == std::vector<double>{0.2, 0.5, 0.8});
}
