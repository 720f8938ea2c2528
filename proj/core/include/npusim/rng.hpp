#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace npusim {

/// Deterministic splitmix64 generator with named-stream derivation.
///
/// Every random quantity in the project flows from one experiment seed via
/// Rng::stream(seed, name); the same (seed, name) pair yields the same
/// sequence on every platform, which keeps golden files and reports
/// bit-reproducible. Not suitable for cryptography.
class Rng {
public:
  explicit Rng(uint64_t state) : state_(state ? state : 0x9e3779b97f4a7c15ull) {}

  /// Derives an independent stream from (seed, name). FNV-1a over the name,
  /// mixed with the seed through one splitmix round.
  static Rng stream(uint64_t seed, std::string_view name) {
    uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<uint8_t>(c);
      h *= 1099511628211ull;
    }
    Rng r(seed ^ h);
    r.next_u64();  // decorrelate nearby seeds
    return r;
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller (one value per call, no cached spare so
  /// the stream position is a pure function of call count).
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  float normal_f(float mean = 0.0f, float stddev = 1.0f) {
    return mean + stddev * static_cast<float>(normal());
  }

private:
  uint64_t state_;
};

}  // namespace npusim
