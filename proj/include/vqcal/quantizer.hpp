#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqcal/rng.hpp"
#include "vqcal/tensor.hpp"

namespace vqcal {

/// Splits an m'-dimensional embedding into w contiguous slots of dimension d.
struct SegmentationConfig {
    std::size_t w = 64;
    std::size_t d = 0;
    std::size_t m_prime = 0;

    /// Throws ConfigError when m_prime is not divisible by w.
    static SegmentationConfig for_embedding(std::size_t m_prime, std::size_t w);
    void validate() const;
};

/// Slot i is z[i*d, (i+1)*d).
std::vector<std::vector<float>> segment(std::span<const float> z, const SegmentationConfig& cfg);

using CodeIndex = std::uint32_t;

/// Codeword index per slot; identifies one Voronoi cell of the quantized space.
struct IndexSequence {
    std::vector<CodeIndex> s;

    std::size_t size() const { return s.size(); }
    CodeIndex operator[](std::size_t i) const { return s[i]; }
    friend auto operator<=>(const IndexSequence&, const IndexSequence&) = default;
};

inline constexpr double kEmaSizeFloor = 1e-5;

/// Shared codebook with EMA accumulators. Invariant after every update:
/// codeword k == ema_cluster_sum[k] / max(ema_cluster_size[k], 1e-5).
struct Codebook {
    Tensor2D codewords;                    // |C| x d
    std::vector<double> ema_cluster_size;  // |C|
    std::vector<double> ema_cluster_sum;   // |C| x d, row-major
    double decay = 0.99;

    std::size_t size() const { return codewords.rows; }
    std::size_t dim() const { return codewords.cols; }

    /// Builds a codebook whose accumulators are seeded as size = 1, sum = codeword.
    static Codebook from_codewords(Tensor2D codewords, double decay);
};

struct Nearest {
    CodeIndex index;
    double sq_distance;
};

/// argmin_k ||slot - c_k||^2, lowest index on ties.
Nearest nearest_codeword(std::span<const float> slot, const Codebook& codebook);

/// Assigns each row of `slots` (w x d).
IndexSequence assign(const Tensor2D& slots, const Codebook& codebook);
/// Segments z and assigns every slot.
IndexSequence assign(std::span<const float> z, const SegmentationConfig& cfg, const Codebook& codebook);

struct Quantized {
    IndexSequence cell;
    std::vector<float> q;  // concatenated selected codewords, length m'
};

/// Per-slot nearest neighbour; the concatenation is the nearest point of the
/// product codebook to z.
Quantized quantize(std::span<const float> z, const Codebook& codebook, const SegmentationConfig& cfg);

/// Index sequences for every row of an n x m' matrix, stored n x w.
struct Assignments {
    std::size_t w = 0;
    std::vector<CodeIndex> idx;

    std::size_t rows() const { return w == 0 ? 0 : idx.size() / w; }
    std::span<const CodeIndex> row(std::size_t i) const { return {idx.data() + i * w, w}; }
    IndexSequence cell(std::size_t i) const {
        auto r = row(i);
        return IndexSequence{{r.begin(), r.end()}};
    }
};

Assignments assign_rows(const Tensor2D& embeddings, const SegmentationConfig& cfg, const Codebook& codebook);

/// Writes the flattened quantized representation of every row (n x m').
Tensor2D select_codewords(const Assignments& a, const Codebook& codebook);

/// EMA step over a batch of slot vectors (rows of `slots`, N*w x d):
///   size_k <- g*size_k + (1-g)*count_k
///   sum_k  <- g*sum_k  + (1-g)*sum of assigned slots
///   c_k    <- sum_k / max(size_k, 1e-5)
void ema_update(Codebook& codebook, const Tensor2D& slots, std::span<const CodeIndex> assignments);

/// |C| distinct slot vectors drawn uniformly without replacement from the
/// segmented embeddings.
Codebook init_codebook(const Tensor2D& embeddings, const SegmentationConfig& cfg, std::size_t size, double decay,
                       Rng& rng);

struct UsageStats {
    std::vector<std::size_t> counts;
    std::size_t min = 0;
    std::size_t max = 0;
    double std = 0.0;  // population standard deviation of counts
    std::size_t total = 0;
};

UsageStats usage_stats(std::span<const CodeIndex> assignments, std::size_t codebook_size);

}  // namespace vqcal
