#pragma once

#include <cstdint>
#include <random>

namespace debiaslab {

// Deterministic sampling helpers over std::mt19937_64. The standard library
// distributions are implementation-defined, so integer/real/normal draws are
// mapped by hand; the same seed yields the same stream on every toolchain.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    // Uniform real in [0, 1) with 53-bit resolution.
    double real01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the paired draw is cached.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace debiaslab
