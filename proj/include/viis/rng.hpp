#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "viis/error.hpp"

namespace viis {

namespace detail {
inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// xoshiro256** generator. 32-byte state, serialized verbatim into
/// checkpoints; all sampling in the project goes through this so that runs
/// are reproducible from a seed alone.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : state_) w = detail::splitmix64(x);
  }

  /// Independent child stream, e.g. per-image augmentation.
  static Rng derive(uint64_t seed, uint64_t stream) {
    uint64_t x = seed ^ (0x632be59bd9b4e019ULL * (stream + 1));
    Rng r;
    for (auto& w : r.state_) w = detail::splitmix64(x);
    return r;
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  uint64_t below(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (one value per call; no cached spare so
  /// the state alone determines the stream).
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Poisson by Knuth's product method; adequate for the lambda <= 20 range
  /// used by the augmentation pipeline.
  int poisson(double lambda) {
    if (lambda < 0) throw ParamError("poisson: negative lambda");
    if (lambda == 0) return 0;
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  static constexpr size_t kStateBytes = 32;
  void save_state(unsigned char out[kStateBytes]) const { std::memcpy(out, state_.data(), kStateBytes); }
  void load_state(const unsigned char in[kStateBytes]) { std::memcpy(state_.data(), in, kStateBytes); }

  bool operator==(const Rng& o) const { return state_ == o.state_; }

 private:
  std::array<uint64_t, 4> state_{};
};

}  // namespace viis
