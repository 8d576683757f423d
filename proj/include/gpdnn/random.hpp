#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace gpdnn {

// Distributions are written out by hand on top of mt19937_64 because the
// standard library's distribution objects are implementation-defined, and
// every experiment has to be byte-reproducible from its seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n).
    std::size_t index(std::size_t n) {
        // Lemire-style rejection keeps the draw unbiased.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % n);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Normal draw rejected outside two standard deviations.
    double truncated_normal(double stddev) {
        double z;
        do {
            z = normal();
        } while (std::abs(z) > 2.0);
        return stddev * z;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(perm[i - 1], perm[j]);
        }
        return perm;
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + index(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gpdnn
