#pragma once

#include "langsplit/core.hpp"

#include <array>
#include <cstdint>

namespace langsplit {

/// Philox4x32-10 counter-based generator.
///
/// A stream is identified by (seed, stream_id): the seed is the Philox key and
/// the stream id occupies the upper 64 bits of the counter, so distinct stream
/// ids walk disjoint counter ranges of the same bijection. State is 40 bytes,
/// which makes one stream per Monte-Carlo chain affordable.
class RngStream {
 public:
  using Block = std::array<std::uint32_t, 4>;

  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t blocks_drawn() const { return counter_; }

  /// Raw Philox4x32-10 output for an explicit key and counter.
  static Block philox(Block counter, std::array<std::uint32_t, 2> key);

  Block next_block();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller; draws are consumed in pairs.
  double normal();

  template <typename Derived>
  void fill_normal(Eigen::MatrixBase<Derived>& out) {
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal();
  }

  Vector normal_vector(Eigen::Index d) {
    Vector v(d);
    fill_normal(v);
    return v;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// dW over a step of length dt: each component N(0, dt).
struct BrownianIncrement {
  double dt = 0.0;
  Vector noise;
};

BrownianIncrement draw_increment(RngStream& rng, double dt, Eigen::Index d);

}  // namespace langsplit
