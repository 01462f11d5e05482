#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace coxq {

namespace detail {

// splitmix64 finalizer; decorrelates consecutive seeds and stream ids.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// A seeded pseudo-random stream. Streams for independent replications are
/// obtained with derive(seed, index), so replication r always sees the same
/// numbers regardless of how replications are scheduled over threads.
class RandomStream {
 public:
  using engine_type = std::mt19937_64;

  explicit RandomStream(std::uint64_t seed) : engine_(detail::mix64(seed)) {}

  static RandomStream derive(std::uint64_t seed, std::uint64_t stream) {
    return RandomStream(detail::mix64(seed) ^ detail::mix64(~stream));
  }

  engine_type& engine() { return engine_; }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = std::generate_canonical<double, 53>(engine_);
    } while (u <= 0.0);
    return u;
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  double gamma(double shape, double scale) {
    if (shape <= 0.0) return 0.0;
    return std::gamma_distribution<double>(shape, scale)(engine_);
  }

  std::int64_t poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    return std::poisson_distribution<std::int64_t>(mean)(engine_);
  }

  std::int64_t binomial(std::int64_t trials, double p) {
    if (trials <= 0 || p <= 0.0) return 0;
    if (p >= 1.0) return trials;
    return std::binomial_distribution<std::int64_t>(trials, p)(engine_);
  }

  /// Next raw 64-bit word; used to seed child streams.
  std::uint64_t next_u64() { return engine_(); }

 private:
  engine_type engine_;
};

}  // namespace coxq
