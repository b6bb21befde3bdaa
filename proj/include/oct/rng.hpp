#ifndef OCT_RNG_HPP
#define OCT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oct {

/// Seeded RNG with hand-rolled distributions. mt19937_64 output is fixed by
/// the standard and the transforms below avoid libstdc++-specific
/// distribution internals, so streams are reproducible across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    /// Standard normal via Box-Muller (one value per call; no caching so the
    /// stream position is easy to reason about).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    /// Gaussian truncated to [-limit, limit] by rejection.
    double truncated_normal(double std, double limit) {
        for (;;) {
            const double v = std * normal();
            if (v >= -limit && v <= limit) return v;
        }
    }

    /// Gamma(shape k, scale 1) via Marsaglia-Tsang; k < 1 uses the boost trick.
    double gamma(double k) {
        if (k < 1.0) {
            const double u = uniform();
            return gamma(k + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / k);
        }
        const double d = k - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(eng_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derives an independent child seed; use for per-epoch / per-item streams.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace oct

#endif
