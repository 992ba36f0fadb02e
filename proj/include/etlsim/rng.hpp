#pragma once

// Seeded, splittable random streams.
//
// Every stream is a xoshiro256** generator whose 256-bit state is derived
// from (seed, stream id) through SplitMix64. Stream ids are (index, purpose)
// pairs, typically a phase index and what the draws are used for, so the
// sequence a stream produces does not depend on how many draws any other
// stream has made. The algorithms below are fixed; replays are bit-exact
// across platforms and standard library implementations.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace etlsim {

enum class StreamPurpose : std::uint32_t {
  processing_time = 1,
  arrivals = 2,
  routing = 3,
  edge_order = 4,
};

struct StreamId {
  std::uint64_t index = 0;
  StreamPurpose purpose = StreamPurpose::processing_time;

  friend bool operator==(const StreamId&, const StreamId&) = default;
};

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Satisfies std::uniform_random_bit_generator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0, StreamId{}) {}

  RngStream(std::uint64_t seed, StreamId id) {
    std::uint64_t mix = seed;
    // Fold the stream id into the seed with two independent SplitMix rounds
    // so that nearby ids land far apart.
    std::uint64_t key = splitmix64(mix) ^ (id.index * 0xD1B54A32D192ED03ULL);
    mix = key;
    key = splitmix64(mix) ^ (static_cast<std::uint64_t>(id.purpose) * 0xABC98388FB8FAC03ULL);
    mix = key;
    for (auto& word : s_) word = splitmix64(mix);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1); safe to take the logarithm of.
  double uniform_open() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), unbiased by rejecting the short top range.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n == 0) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = (*this)();
      if (x >= threshold) return x % n;
    }
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::array<std::uint64_t, 4> s_{};
};

// Standard normal by the Marsaglia polar method. The spare variate is
// discarded so that every call consumes a whole number of draws.
inline double standard_normal(RngStream& rng) noexcept {
  for (;;) {
    const double u = 2.0 * rng.uniform() - 1.0;
    const double v = 2.0 * rng.uniform() - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

// Gamma(shape, scale) by Marsaglia and Tsang; shapes below 1 use the
// U^(1/shape) boost.
inline double gamma_variate(RngStream& rng, double shape, double scale) noexcept {
  if (shape < 1.0) {
    const double g = gamma_variate(rng, shape + 1.0, 1.0);
    return scale * g * std::pow(rng.uniform_open(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return scale * d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return scale * d * v;
  }
}

inline double lognormal_variate(RngStream& rng, double mu, double sigma) noexcept {
  return std::exp(mu + sigma * standard_normal(rng));
}

// Poisson(mean) by Knuth's product method. Large means are split into
// chunks of at most 32 and summed, which keeps exp(-chunk) well inside the
// double range and stays exact.
inline std::uint64_t poisson_variate(RngStream& rng, double mean) noexcept {
  std::uint64_t total = 0;
  while (mean > 0.0) {
    const double chunk = mean > 32.0 ? 32.0 : mean;
    mean -= chunk;
    const double limit = std::exp(-chunk);
    double product = rng.uniform_open();
    while (product > limit) {
      ++total;
      product *= rng.uniform_open();
    }
  }
  return total;
}

}  // namespace etlsim
