#include "debiaslab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace debiaslab {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) {
        throw std::invalid_argument("Rng::below: n must be positive");
    }
    // Reject the first (2^64 mod n) values so the remainder is unbiased.
    const std::uint64_t threshold = (0 - n) % n;
    std::uint64_t x = next_u64();
    while (x < threshold) {
        x = next_u64();
    }
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = real01();
    while (u1 <= 0.0) {
        u1 = real01();
    }
    const double u2 = real01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

}  // namespace debiaslab
