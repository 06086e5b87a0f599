#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fillup {

/// Derives an independent seed for a named substream of a master seed.
/// Used so that every stage and every class draws from its own stream.
std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }
  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  Rng substream(std::string_view name, std::uint64_t index = 0) const {
    return Rng(derive_seed(seed_, name, index));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fillup
