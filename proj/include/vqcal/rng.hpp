#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vqcal {

/// xoshiro256** seeded through splitmix64. Every draw helper below is defined
/// in terms of next_u64() only, so streams are identical across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1) built from the top 53 bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller; caches the second variate.
    double normal();

    /// Draw index i with probability weights[i] / sum(weights).
    std::size_t categorical(std::span<const double> weights);

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    /// Permutation of [0, n).
    std::vector<std::size_t> permutation(std::size_t n);

private:
    std::uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace vqcal
