#include "vqcal/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vqcal/errors.hpp"
#include "vqcal/parallel.hpp"

namespace vqcal {

SegmentationConfig SegmentationConfig::for_embedding(std::size_t m_prime, std::size_t w) {
    if (w == 0 || m_prime == 0 || m_prime % w != 0) {
        throw ConfigError("embedding dimension " + std::to_string(m_prime) + " is not divisible by w = " +
                          std::to_string(w));
    }
    return SegmentationConfig{w, m_prime / w, m_prime};
}

void SegmentationConfig::validate() const {
    if (w == 0 || d == 0 || m_prime != w * d) {
        throw ConfigError("segmentation: m' = " + std::to_string(m_prime) + " must equal w*d = " +
                          std::to_string(w) + "*" + std::to_string(d));
    }
}

std::vector<std::vector<float>> segment(std::span<const float> z, const SegmentationConfig& cfg) {
    cfg.validate();
    if (z.size() != cfg.m_prime) {
        throw ConfigError("segment: vector length " + std::to_string(z.size()) + " != m' " +
                          std::to_string(cfg.m_prime));
    }
    std::vector<std::vector<float>> slots(cfg.w);
    for (std::size_t i = 0; i < cfg.w; ++i) {
        slots[i].assign(z.begin() + static_cast<std::ptrdiff_t>(i * cfg.d),
                        z.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg.d));
    }
    return slots;
}

Codebook Codebook::from_codewords(Tensor2D codewords, double decay) {
    Codebook cb;
    cb.decay = decay;
    cb.ema_cluster_size.assign(codewords.rows, 1.0);
    cb.ema_cluster_sum.assign(codewords.data.begin(), codewords.data.end());
    cb.codewords = std::move(codewords);
    return cb;
}

Nearest nearest_codeword(std::span<const float> slot, const Codebook& codebook) {
    if (codebook.size() == 0) throw ConfigError("assign: empty codebook");
    if (slot.size() != codebook.dim()) {
        throw ConfigError("assign: slot dimension " + std::to_string(slot.size()) + " != codeword dimension " +
                          std::to_string(codebook.dim()));
    }
    Nearest best{0, std::numeric_limits<double>::infinity()};
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        const auto c = codebook.codewords.row(k);
        double dist = 0.0;
        for (std::size_t j = 0; j < slot.size(); ++j) {
            const double diff = static_cast<double>(slot[j]) - static_cast<double>(c[j]);
            dist += diff * diff;
        }
        if (dist < best.sq_distance) best = {static_cast<CodeIndex>(k), dist};
    }
    return best;
}

IndexSequence assign(const Tensor2D& slots, const Codebook& codebook) {
    IndexSequence out;
    out.s.reserve(slots.rows);
    for (std::size_t i = 0; i < slots.rows; ++i) out.s.push_back(nearest_codeword(slots.row(i), codebook).index);
    return out;
}

IndexSequence assign(std::span<const float> z, const SegmentationConfig& cfg, const Codebook& codebook) {
    cfg.validate();
    if (z.size() != cfg.m_prime) throw ConfigError("assign: embedding length mismatch");
    IndexSequence out;
    out.s.reserve(cfg.w);
    for (std::size_t i = 0; i < cfg.w; ++i) {
        out.s.push_back(nearest_codeword(z.subspan(i * cfg.d, cfg.d), codebook).index);
    }
    return out;
}

Quantized quantize(std::span<const float> z, const Codebook& codebook, const SegmentationConfig& cfg) {
    Quantized out{assign(z, cfg, codebook), std::vector<float>(cfg.m_prime)};
    for (std::size_t i = 0; i < cfg.w; ++i) {
        const auto c = codebook.codewords.row(out.cell[i]);
        std::copy(c.begin(), c.end(), out.q.begin() + static_cast<std::ptrdiff_t>(i * cfg.d));
    }
    return out;
}

Assignments assign_rows(const Tensor2D& embeddings, const SegmentationConfig& cfg, const Codebook& codebook) {
    cfg.validate();
    if (embeddings.cols != cfg.m_prime) {
        throw ConfigError("assign: embedding dimension " + std::to_string(embeddings.cols) + " != m' " +
                          std::to_string(cfg.m_prime));
    }
    if (codebook.dim() != cfg.d) throw ConfigError("assign: codeword dimension does not match slot dimension");
    Assignments a{cfg.w, std::vector<CodeIndex>(embeddings.rows * cfg.w)};
    parallel_for(embeddings.rows, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto z = embeddings.row(i);
            for (std::size_t s = 0; s < cfg.w; ++s) {
                a.idx[i * cfg.w + s] = nearest_codeword(z.subspan(s * cfg.d, cfg.d), codebook).index;
            }
        }
    });
    return a;
}

Tensor2D select_codewords(const Assignments& a, const Codebook& codebook) {
    const std::size_t d = codebook.dim();
    Tensor2D q(a.rows(), a.w * d);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = q.row(i);
        const auto cell = a.row(i);
        for (std::size_t s = 0; s < a.w; ++s) {
            const auto c = codebook.codewords.row(cell[s]);
            std::copy(c.begin(), c.end(), out.begin() + static_cast<std::ptrdiff_t>(s * d));
        }
    }
    return q;
}

void ema_update(Codebook& codebook, const Tensor2D& slots, std::span<const CodeIndex> assignments) {
    const std::size_t size = codebook.size();
    const std::size_t d = codebook.dim();
    if (slots.rows != assignments.size()) throw ConfigError("ema_update: slot count does not match assignments");
    if (slots.cols != d) throw ConfigError("ema_update: slot dimension does not match codebook");
    std::vector<double> counts(size, 0.0);
    std::vector<double> sums(size * d, 0.0);
    for (std::size_t i = 0; i < slots.rows; ++i) {
        const CodeIndex k = assignments[i];
        if (k >= size) throw ConfigError("ema_update: assignment " + std::to_string(k) + " out of range");
        counts[k] += 1.0;
        const auto x = slots.row(i);
        for (std::size_t j = 0; j < d; ++j) sums[k * d + j] += x[j];
    }
    const double g = codebook.decay;
    for (std::size_t k = 0; k < size; ++k) {
        double& n_k = codebook.ema_cluster_size[k];
        n_k = g * n_k + (1.0 - g) * counts[k];
        const double denom = std::max(n_k, kEmaSizeFloor);
        for (std::size_t j = 0; j < d; ++j) {
            double& s = codebook.ema_cluster_sum[k * d + j];
            s = g * s + (1.0 - g) * sums[k * d + j];
            codebook.codewords(k, j) = static_cast<float>(s / denom);
        }
    }
}

Codebook init_codebook(const Tensor2D& embeddings, const SegmentationConfig& cfg, std::size_t size, double decay,
                       Rng& rng) {
    cfg.validate();
    if (embeddings.cols != cfg.m_prime) throw ConfigError("init_codebook: embedding dimension mismatch");
    if (size == 0) throw ConfigError("init_codebook: codebook size must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("init_codebook: decay must lie in (0, 1]");
    const std::size_t n_slots = embeddings.rows * cfg.w;
    if (n_slots < size) {
        throw ConfigError("init_codebook: need at least " + std::to_string(size) + " slot vectors, have " +
                          std::to_string(n_slots));
    }
    const auto picks = rng.sample_without_replacement(n_slots, size);
    Tensor2D codewords(size, cfg.d);
    for (std::size_t k = 0; k < size; ++k) {
        const std::size_t row = picks[k] / cfg.w;
        const std::size_t slot = picks[k] % cfg.w;
        const auto src = embeddings.row(row).subspan(slot * cfg.d, cfg.d);
        std::copy(src.begin(), src.end(), codewords.row(k).begin());
    }
    return Codebook::from_codewords(std::move(codewords), decay);
}

UsageStats usage_stats(std::span<const CodeIndex> assignments, std::size_t codebook_size) {
    UsageStats u;
    u.counts.assign(codebook_size, 0);
    for (CodeIndex k : assignments) {
        if (k >= codebook_size) throw ConfigError("usage_stats: index out of range");
        ++u.counts[k];
    }
    u.total = assignments.size();
    if (codebook_size == 0) return u;
    u.min = *std::min_element(u.counts.begin(), u.counts.end());
    u.max = *std::max_element(u.counts.begin(), u.counts.end());
    const double mean = static_cast<double>(u.total) / static_cast<double>(codebook_size);
    double var = 0.0;
    for (std::size_t c : u.counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
    u.std = std::sqrt(var / static_cast<double>(codebook_size));
    return u;
}

}  // namespace vqcal
