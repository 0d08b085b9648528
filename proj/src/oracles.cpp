#include "vqcal/oracles.hpp"

#include <cmath>
#include <limits>

#include "vqcal/errors.hpp"

namespace vqcal {

IndexSequence nearest_by_enumeration(std::span<const float> z, const Codebook& codebook,
                                     const SegmentationConfig& cfg) {
    cfg.validate();
    if (z.size() != cfg.m_prime) throw ConfigError("embedding length does not match segmentation");
    const std::size_t c = codebook.size(), w = cfg.w, d = cfg.d;
    if (c == 0) throw ConfigError("empty codebook");
    std::size_t total = 1;
    for (std::size_t t = 0; t < w; ++t) {
        if (total > std::numeric_limits<std::size_t>::max() / c || total * c > 50'000'000) {
            throw ConfigError("product codebook too large to enumerate");
        }
        total *= c;
    }

    std::vector<CodeIndex> digits(w, 0);
    std::vector<CodeIndex> best(w, 0);
    double best_d = std::numeric_limits<double>::infinity();
    std::vector<float> concat(cfg.m_prime);
    for (std::size_t n = 0; n < total; ++n) {
        // digits is n written in base |C|, most significant slot first
        std::size_t rem = n;
        for (std::size_t t = w; t-- > 0;) {
            digits[t] = static_cast<CodeIndex>(rem % c);
            rem /= c;
        }
        for (std::size_t t = 0; t < w; ++t) {
            for (std::size_t e = 0; e < d; ++e) concat[t * d + e] = codebook.codewords(digits[t], e);
        }
        double dist = 0.0;
        for (std::size_t e = 0; e < cfg.m_prime; ++e) {
            const double diff = static_cast<double>(z[e]) - concat[e];
            dist += diff * diff;
        }
        if (dist < best_d) {
            best_d = dist;
            best = digits;
        }
    }
    return IndexSequence{best};
}

std::vector<double> dirichlet_bayes_posterior(std::span<const double> prior, std::span<const double> alphas,
                                              std::span<const double> p) {
    const std::size_t k = p.size();
    if (prior.size() != k || alphas.size() != k * k) throw ConfigError("dirichlet_bayes_posterior: shape mismatch");
    std::vector<double> density(k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        double a0 = 0.0, log_norm = 0.0, log_kernel = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double a = alphas[j * k + i];
            a0 += a;
            log_norm -= std::lgamma(a);
            log_kernel += (a - 1.0) * std::log(p[i]);
        }
        log_norm += std::lgamma(a0);
        density[j] = prior[j] * std::exp(log_norm + log_kernel);
        total += density[j];
    }
    for (double& v : density) v /= total;
    return density;
}

}  // namespace vqcal
