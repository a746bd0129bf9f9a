#pragma once

#include <cstdint>
#include <random>

namespace headfem {

/// Seeded generator through which all stochastic steps draw.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
        return dist(engine_);
    }

    double normal() { return normal_(engine_); }

    std::uint64_t next() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Derives an independent stream seed from a master seed and a label.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

} // namespace headfem
