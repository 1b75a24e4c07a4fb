#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter), so fixtures reproduce across platforms and
// languages: value = splitmix64(seed ^ mix(stream) + counter * golden).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace snn_inekf {

inline constexpr std::string_view kRngName = "splitmix64-counter";

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(splitmix64(seed) ^ splitmix64(stream * 0xD1B54A32D192ED03ULL + 1)) {}

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++); }

  /// Uniform in the open interval (0, 1); 53-bit resolution.
  double uniform() {
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double uniform(double low, double high) { return low + (high - low) * uniform(); }

  /// Standard normal via Box–Muller; pairs are consumed in order.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double phase = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(phase);
    has_spare_ = true;
    return radius * std::cos(phase);
  }

  /// Normal truncated to ±2 standard deviations (rejection).
  double truncated_gaussian(double stddev) {
    for (;;) {
      const double z = gaussian();
      if (std::abs(z) <= 2.0) return z * stddev;
    }
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace snn_inekf
