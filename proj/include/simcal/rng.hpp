#pragma once

#include <cstdint>
#include <random>

namespace simcal {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Random stream with explicit substream derivation. Work item `id` under a
// given seed always sees the same numbers, independent of scheduling.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  Rng substream(std::uint64_t id) const {
    return Rng(splitmix64(seed_ ^ splitmix64(id + 0x632be59bd9b4e019ULL)));
  }
  Rng substream(std::uint64_t a, std::uint64_t b) const { return substream(a).substream(b); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  int bernoulli(double p) { return uniform() < p ? 1 : 0; }
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    std::poisson_distribution<long> d(mean);
    return d(engine_);
  }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(engine_);
  }

  engine_type& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace simcal
