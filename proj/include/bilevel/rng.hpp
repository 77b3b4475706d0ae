#pragma once

#include <array>
#include <cstdint>

#include "bilevel/tensor.hpp"

namespace bilevel {

/// xoshiro256** 1.0 (Blackman & Vigna), seeded through splitmix64.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);
  /// Direct state initialisation, used to check the reference vectors.
  explicit Xoshiro256(const std::array<std::uint64_t, 4>& state) : s_(state) {}

  std::uint64_t next();
  /// Uniform on [0, 1) from the top 53 bits.
  double uniform();

 private:
  std::array<std::uint64_t, 4> s_;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Standard normal draws by Box-Muller. Draws come in pairs from two uniforms;
/// the even-indexed draw is the cosine branch, the odd-indexed one the sine.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}
  double next();

 private:
  Xoshiro256 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Tensor of i.i.d. N(0, sigma^2) entries, deterministic in (seed, dims).
Tensor random_normal(const Dims& dims, std::uint64_t seed, double sigma = 1.0);

}  // namespace bilevel
