#include "doctest.h"

#include "langsplit/core.hpp"
#include "langsplit/rng.hpp"

#include <cmath>

using namespace langsplit;

TEST_CASE("philox4x32-10 known-answer vectors") {
  using B = RngStream::Block;
  CHECK(RngStream::philox(B{0, 0, 0, 0}, {0, 0}) == B{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(RngStream::philox(B{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        B{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(RngStream::philox(B{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        B{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("stream counter layout") {
  // Block k of stream (seed, id) is philox({k_lo, k_hi, id_lo, id_hi}, {seed_lo, seed_hi}).
  RngStream rng(0x0123456789abcdefULL, 0xfedcba9876543210ULL);
  rng.next_block();
  const auto b = rng.next_block();
  CHECK(b == RngStream::philox({1, 0, 0x76543210u, 0xfedcba98u}, {0x89abcdefu, 0x01234567u}));
  CHECK(rng.blocks_drawn() == 2);
}

TEST_CASE("draw_increment moments") {
  SUBCASE("mean") {
    RngStream rng(1, 0);
    const BrownianIncrement inc = draw_increment(rng, 1.0, 1000000);
    // 3 sigma of the sample mean of 1e6 unit normals is 0.003.
    CHECK(std::abs(inc.noise.mean()) < 0.004);
  }
  SUBCASE("variance equals dt") {
    RngStream rng(1, 0);
    const BrownianIncrement inc = draw_increment(rng, 0.25, 1000000);
    const double var = (inc.noise.array() - inc.noise.mean()).square().sum() / double(inc.noise.size() - 1);
    CHECK(std::abs(var / 0.25 - 1.0) < 0.01);
    CHECK(inc.dt == 0.25);
  }
  SUBCASE("fourth moment of a normal") {
    RngStream rng(7, 3);
    const Vector x = rng.normal_vector(1000000);
    CHECK(std::abs(x.array().pow(4).mean() - 3.0) < 0.03);
  }
}

TEST_CASE("determinism and stream separation") {
  RngStream a(5, 2), b(5, 2), c(5, 3), d(6, 2);
  const Vector xa = draw_increment(a, 0.1, 1000).noise;
  const Vector xb = draw_increment(b, 0.1, 1000).noise;
  const Vector xc = draw_increment(c, 0.1, 1000).noise;
  const Vector xd = draw_increment(d, 0.1, 1000).noise;
  CHECK(xa == xb);
  CHECK(xa != xc);
  CHECK(xa != xd);

  // Correlation between neighbouring streams is at the 1/sqrt(n) level.
  RngStream s0(11, 0), s1(11, 1);
  const Vector u = s0.normal_vector(200000), v = s1.normal_vector(200000);
  const double corr = u.dot(v) / std::sqrt(u.squaredNorm() * v.squaredNorm());
  CHECK(std::abs(corr) < 4.0 / std::sqrt(200000.0));
}

TEST_CASE("uniform stays in the open unit interval") {
  RngStream rng(3, 9);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  CHECK(std::abs(sum / 100000 - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / 100000));
}

TEST_CASE("draw_increment rejects bad arguments") {
  RngStream rng(1, 0);
  CHECK_THROWS_AS(draw_increment(rng, 0.0, 3), ArgumentError);
  CHECK_THROWS_AS(draw_increment(rng, -1.0, 3), ArgumentError);
  CHECK_THROWS_AS(draw_increment(rng, 1.0, 0), ArgumentError);
}

TEST_CASE("names round-trip") {
  for (auto p : {Parameterization::vp, Parameterization::ve_karras, Parameterization::rectified_flow})
    CHECK(parse_parameterization(to_string(p)) == p);
  for (auto k : {PredictionKind::score, PredictionKind::noise, PredictionKind::velocity})
    CHECK(parse_prediction_kind(to_string(k)) == k);
  for (auto m : {ModelType::vp_sde, ModelType::vp_ode, ModelType::ve_karras, ModelType::rectified_flow})
    CHECK(parse_model_type(to_string(m)) == m);
  CHECK_THROWS_AS(parse_model_type("ddim"), ArgumentError);
}

TEST_CASE("level domains") {
  CHECK_NOTHROW(check_level(Parameterization::vp, 1.0));
  CHECK_THROWS_AS(check_level(Parameterization::vp, 0.0), DomainError);
  CHECK_THROWS_AS(check_level(Parameterization::vp, 1.5), DomainError);
  CHECK_NOTHROW(check_level(Parameterization::ve_karras, 0.0));
  CHECK_THROWS_AS(check_level(Parameterization::ve_karras, -1e-3), DomainError);
  CHECK_NOTHROW(check_level(Parameterization::rectified_flow, 1.0 - 1e-6));
  CHECK_THROWS_AS(check_level(Parameterization::rectified_flow, 1.0 - 1e-7), DomainError);
  CHECK_THROWS_AS(check_level(Parameterization::ve_karras, std::nan("")), DomainError);

  ParamPointd p{Parameterization::vp, Vector::Constant(2, std::numeric_limits<double>::infinity()), 0.5};
  CHECK_THROWS_AS(validate(p), ArgumentError);
}

TEST_CASE("VP clock helpers") {
  CHECK(vp_alpha_from_time(0.0) == 1.0);
  CHECK(std::abs(vp_time_from_alpha(vp_alpha_from_time(2.5)) - 2.5) < 1e-15);
}
