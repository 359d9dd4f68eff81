// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace pfrnn {

/// Seeded random stream. Two streams with the same seed that are asked for
/// the same sequence of draws return the same values on every platform:
/// the engine is std::mt19937_64 and all transforms are implemented here.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  /// Number of raw 64-bit draws consumed so far.
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (two uniforms per draw).
  double gaussian();
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);

  /// Independent stream derived from this stream's seed and an id. Does not
  /// advance this stream.
  RngStream fork(std::uint64_t stream_id) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace pfrnn
