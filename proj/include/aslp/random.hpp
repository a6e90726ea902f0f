#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>

#include "aslp/errors.hpp"

namespace aslp {

/// Sample indices at the top of the range are reserved for streams that are
/// not tied to one training sample (initialisation, epoch shuffles).
inline constexpr std::uint64_t kInitStream = std::numeric_limits<std::uint64_t>::max();
inline constexpr std::uint64_t kShuffleStream = kInitStream - 1;
inline constexpr std::uint64_t kAdaptiveShuffleStream = kInitStream - 2;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Reproducible random stream keyed by (seed, sample index, epoch).
///
/// Every distribution here is implemented on top of the raw 64-bit engine
/// output; the standard library distributions are implementation defined
/// and would break cross-platform reproducibility.
class RandomSource {
 public:
  RandomSource(std::uint64_t seed, std::uint64_t sample, std::uint64_t epoch)
      : engine_(derive(seed, sample, epoch)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0,1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw DomainError("below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("bernoulli: p = " + std::to_string(p) + " outside [0,1]");
    }
    return uniform() < p;
  }

  /// Box-Muller; the second variate is discarded so that every call
  /// consumes exactly two engine outputs.
  double normal(double mu, double sigma) {
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// N(mu, sigma) conditioned on [a, b], by rejection.
  double truncated_normal(double a, double b, double mu, double sigma) {
    if (!(a < b)) throw DomainError("truncated_normal: requires a < b");
    if (!(sigma > 0.0)) throw DomainError("truncated_normal: requires sigma > 0");
    for (;;) {
      const double x = normal(mu, sigma);
      if (x >= a && x <= b) return x;
    }
  }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t sample, std::uint64_t epoch) {
    std::uint64_t h = detail::splitmix64(seed);
    h = detail::splitmix64(h ^ sample);
    h = detail::splitmix64(h ^ (epoch * 0xd1b54a32d192ed03ULL));
    return h;
  }

  std::mt19937_64 engine_;
};

}  // namespace aslp
