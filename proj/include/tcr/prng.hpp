#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace tcr {

// SplitMix64 finalizer. Constants are the reference ones:
// gamma 0x9E3779B97F4A7C15, mixers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
inline std::uint64_t splitmix64_mix(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based SplitMix64 stream. Every draw is a pure function of
// (seed, key..., draw index), so generation order never depends on
// container iteration or thread scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64_mix(seed + 0x9E3779B97F4A7C15ULL)) {}

  Rng(std::uint64_t seed, std::uint64_t k1) : Rng(seed) { mix_key(k1); }
  Rng(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2) : Rng(seed, k1) { mix_key(k2); }
  Rng(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2, std::uint64_t k3) : Rng(seed, k1, k2) {
    mix_key(k3);
  }

  void mix_key(std::uint64_t k) { state_ = splitmix64_mix(state_ ^ splitmix64_mix(k + 0x9E3779B97F4A7C15ULL)); }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Modulo bias is below n / 2^64.
  std::uint64_t next_below(std::uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }

  std::int64_t next_range(std::int64_t lo, std::int64_t hi_inclusive) {
    return lo + static_cast<std::int64_t>(next_below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  // Box-Muller. Deterministic for a fixed libm.
  double next_gauss() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // First k of a Fisher-Yates shuffle of 0..n-1, returned sorted ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

inline std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) k = n;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace tcr
