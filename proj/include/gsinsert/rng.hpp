// Deterministic random number generator with portable uniform/normal draws.
//
// The raw stream comes from std::mt19937_64 (a fixed algorithm); uniform and
// normal variates are derived by hand so the exact byte-level behaviour does
// not depend on the standard library's distribution implementations.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gsinsert {

class Rng {
   public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Derive an independent deterministic stream, e.g. one per pipeline stage.
    Rng fork(std::uint64_t stream) {
        return Rng(next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

   private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gsinsert
