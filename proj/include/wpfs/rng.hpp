#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace wpfs {

/// PCG32 (XSH-RR 64/32, O'Neill 2014). One generator drives every stochastic
/// choice in the project so that runs are bit-reproducible across builds and
/// platforms. The `stream` parameter selects an independent sequence, which
/// lets a run derive separate generators for embedding fitting, parameter
/// initialisation and minibatch noise from a single seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 bits of randomness.
    double uniform01();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);

    /// Unbiased integer in [0, n). Rejection sampling; n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (caches the spare deviate).
    double normal();
    double normal(double mean, double stddev);

    /// Fisher-Yates shuffle driven by this generator.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Mixes (seed, salt) into a fresh 64-bit seed (splitmix64 finaliser).
    /// Used to derive independent per-run seeds from a master seed.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt);

private:
    std::uint64_t state_;
    std::uint64_t inc_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace wpfs
