#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

namespace churnrec {

// Seeded random source with platform-independent draws. The standard
// distributions are implementation-defined, so uniform/normal/below are
// derived directly from mt19937_64 output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal();

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Stable derivation of sub-seeds: one master seed fans out to named stages
// and indexed workers (trees, users) independent of execution order.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace churnrec
