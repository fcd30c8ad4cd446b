#include "langsplit/rng.hpp"

#include <cmath>
#include <numbers>

namespace langsplit {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = std::uint64_t(a) * std::uint64_t(b);
  hi = std::uint32_t(p >> 32);
  lo = std::uint32_t(p);
}

// 53 random bits mapped to (0, 1].
inline double to_unit_open_closed(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((std::uint64_t(hi) << 32) | lo) >> 11;
  return (double(bits) + 1.0) * 0x1.0p-53;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

RngStream::Block RngStream::philox(Block ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

RngStream::Block RngStream::next_block() {
  const Block ctr{std::uint32_t(counter_), std::uint32_t(counter_ >> 32), std::uint32_t(stream_id_),
                  std::uint32_t(stream_id_ >> 32)};
  ++counter_;
  return philox(ctr, {std::uint32_t(seed_), std::uint32_t(seed_ >> 32)});
}

double RngStream::uniform() {
  const Block b = next_block();
  double u = to_unit_open_closed(b[0], b[1]);
  // (0,1] -> (0,1): 1.0 only when all 53 bits are set; fold it onto the other half of the block.
  if (u >= 1.0) u = 0.5 * to_unit_open_closed(b[2], b[3]);
  return u;
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const Block b = next_block();
  const double u1 = to_unit_open_closed(b[0], b[1]);
  const double u2 = to_unit_open_closed(b[2], b[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

BrownianIncrement draw_increment(RngStream& rng, double dt, Eigen::Index d) {
  if (!(dt > 0.0)) throw ArgumentError("Brownian increment needs dt > 0");
  if (d < 1) throw ArgumentError("Brownian increment needs dimension >= 1");
  BrownianIncrement inc{dt, Vector(d)};
  const double scale = std::sqrt(dt);
  for (Eigen::Index i = 0; i < d; ++i) inc.noise(i) = scale * rng.normal();
  return inc;
}

}  // namespace langsplit
