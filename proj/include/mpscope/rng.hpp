#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mpscope {

// Deterministic RNG used everywhere seeds matter. mt19937_64 has a
// standard-pinned output sequence, and the Gaussian transform is written out
// below instead of relying on std::normal_distribution (whose algorithm is
// implementation-defined), so identical seeds give identical streams on any
// conforming compiler.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1): top 53 bits of one engine output.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Standard normal via the Marsaglia polar method; two variates per
    // accepted pair, the second cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double scale = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * scale;
        has_spare_ = true;
        return u * scale;
    }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    std::uint64_t raw() { return gen_(); }

   private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mpscope
