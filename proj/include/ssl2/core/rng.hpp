#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>
#include <vector>

namespace ssl2 {

// splitmix64, used to turn (seed, stream name) into engine seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic random stream. The engine is std::mt19937_64 but all
// distributions are implemented here so draws are identical across standard
// library implementations (std::uniform_*_distribution is not portable).
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [lo, hi], inclusive. Debiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi <= lo) return lo;
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % range);
  }

  // Uniform double in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + u * (hi - lo);
  }

  // Standard normal via Box-Muller (plain form, one value per call).
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Child stream with an independent, reproducible seed.
  Rng fork(std::string_view name, std::uint64_t index = 0) const {
    std::uint64_t s = seed_mix_ ^ fnv1a64(name) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return Rng(splitmix64(s), splitmix64(s));
  }

  // Root-stream constructor: derives the mixing state from the user seed.
  static Rng root(std::uint64_t seed) {
    std::uint64_t s = seed;
    const std::uint64_t a = splitmix64(s);
    return Rng(a, splitmix64(s));
  }

 private:
  Rng(std::uint64_t engine_seed, std::uint64_t mix) : engine_(engine_seed), seed_mix_(mix) {}

  std::mt19937_64 engine_;
  std::uint64_t seed_mix_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ssl2
