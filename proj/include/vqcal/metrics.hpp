#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqcal/tensor.hpp"

namespace vqcal {

/// Equal-width bins on [0, 1]; a value p lands in min(floor(p * n_bins), n_bins - 1).
struct BinningConfig {
    std::size_t n_bins = 15;
    void validate() const;
    std::size_t bin_of(double p) const;
};

/// RBF kernel exp(-||x_i - x_j||^2 / (2 bandwidth^2)) on embeddings.
struct KernelConfig {
    double bandwidth = 10.0;
    void validate() const;
};

enum class ClassReduction { Mean, Max };

double ece(const Tensor2D& probs, std::span<const int> labels, const BinningConfig& bins = {});
double classwise_ece(const Tensor2D& probs, std::span<const int> labels, const BinningConfig& bins = {});
/// Cumulative residual over ascending class-probability bins, per class, then
/// reduced over classes.
double ecce_for_class(const Tensor2D& probs, std::span<const int> labels, std::size_t cls,
                      const BinningConfig& bins = {});
double ecce(const Tensor2D& probs, std::span<const int> labels, const BinningConfig& bins = {},
            ClassReduction reduction = ClassReduction::Mean);

/// l1 norm of the kernel-weighted mean residual (p_j - onehot(y_j)) around
/// each anchor, with neighbours restricted to the anchor's max-confidence bin.
/// The anchor is part of its own neighbourhood.
std::vector<double> local_residuals(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                                    const BinningConfig& bins = {}, const KernelConfig& kernel = {});
/// (1/|Y|) * mean over anchors of local_residuals.
double lce(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
           const BinningConfig& bins = {}, const KernelConfig& kernel = {});
/// Largest per-anchor local residual.
double mlce(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
            const BinningConfig& bins = {}, const KernelConfig& kernel = {});

struct EssBin {
    double quantile = 0.0;  // upper edge of the bin in ESS rank, in (0, 1]
    double mean_ess = 0.0;
    double mean_residual = 0.0;
    std::size_t count = 0;
};

struct EssAnalysis {
    std::vector<double> ess;       // per row
    std::vector<double> residual;  // per row, kernel over the whole split
    std::vector<EssBin> bins;      // ascending ESS
};

/// ESS_i = (sum_j k_ij)^2 / sum_j k_ij^2 over the whole split, rows sorted by
/// ESS into equal-count bins. Throws ConfigError when n < n_quantile_bins.
EssAnalysis ess_analysis(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                         const KernelConfig& kernel = {}, std::size_t n_quantile_bins = 10);
std::vector<EssBin> ess_curve(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                              const KernelConfig& kernel = {}, std::size_t n_quantile_bins = 10);

double nll(const Tensor2D& probs, std::span<const int> labels);
/// argmax with ties going to the lowest index.
double accuracy(const Tensor2D& probs, std::span<const int> labels);

struct MetricsOptions {
    BinningConfig bins;
    KernelConfig kernel;
    std::size_t ess_bins = 10;
    ClassReduction ecce_reduction = ClassReduction::Mean;
};

struct MetricsReport {
    double ece = 0.0;
    double classwise_ece = 0.0;
    double ecce = 0.0;
    double lce = 0.0;
    double mlce = 0.0;
    double nll = 0.0;
    double acc = 0.0;
    std::vector<EssBin> ess_curve;
};

MetricsReport evaluate(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                       const MetricsOptions& opts = {});

nlohmann::json to_json(const MetricsReport& r);

}  // namespace vqcal
