#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace layoutsynth {

// Mixes (seed, stream) into an independent 64-bit seed (splitmix64 finalizer).
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

// The project-wide PRNG: std::mt19937_64, whose output sequence is fixed by
// the C++ standard, with normals drawn by Box-Muller so that sequences do not
// depend on the standard library's distribution implementations.
class Prng {
 public:
  explicit Prng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Prng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace layoutsynth
