#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace promptkd {

// Seeded generator whose derived draws are identical on every platform.
// std::mt19937_64 is fully specified by the standard; the std distributions
// are not, so the conversions below are done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01();

  // Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  // Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  double normal(double mean = 0.0, double stddev = 1.0);

  // Text round trip of the full engine state (for checkpoints).
  std::string state() const;
  void set_state(const std::string& text);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

// Seed for the RNG stream of one (global seed, index) pair, so that the
// draws for an item do not depend on the order items are processed in.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace promptkd
