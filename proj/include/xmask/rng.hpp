#pragma once

// Deterministic cross-platform RNG: xoshiro256++ seeded through splitmix64.
//
// splitmix64 state update (used to expand the 64-bit seed into the four
// xoshiro words):
//   z  = (state += 0x9E3779B97F4A7C15)
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
//   z ^= z >> 27; z *= 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// xoshiro256++ output and state update:
//   out = rotl(s0 + s3, 23) + s0
//   t = s1 << 17
//   s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t
//   s3 = rotl(s3, 45)
//
// uniform doubles take the top 53 bits: (out >> 11) * 2^-53, giving [0, 1).
// Normal deviates use Box-Muller on two uniforms, so the whole stream is a
// pure function of the seed on every platform.

#include <cmath>
#include <cstdint>

#include "xmask/tensor.hpp"

namespace xmask {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t out = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return out;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the cached second deviate keeps the
  // draw count equal to the uniform consumption divided by two.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint32_t below(std::uint32_t n) { return static_cast<std::uint32_t>(uniform() * n); }

  // Independent per-index substream; used for per-sample parallelism.
  Rng substream(std::uint64_t index) const {
    std::uint64_t mix = seed_ + 0x9E3779B97F4A7C15ULL * (index + 1);
    return Rng(splitmix64(mix));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_ = 0;
  std::uint64_t s_[4] = {};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Values in [0, 1), emitted in flat row-major order.
template <typename S>
Tensor<S> rng_uniform(Rng& rng, Shape shape) {
  Tensor<S> out(std::move(shape));
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<S>(rng.uniform());
  return out;
}

template <typename S>
Tensor<S> rng_uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<S> out(std::move(shape));
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<S>(rng.uniform(lo, hi));
  return out;
}

template <typename S>
Tensor<S> rng_normal(Rng& rng, Shape shape, double mean, double stddev) {
  Tensor<S> out(std::move(shape));
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<S>(rng.normal(mean, stddev));
  return out;
}

template <typename S>
void shuffle_indices(Rng& rng, std::vector<S>& idx) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace xmask
