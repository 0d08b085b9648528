#include "vqcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/parallel.hpp"

namespace vqcal {

void BinningConfig::validate() const {
    if (n_bins == 0) throw ConfigError("number of bins must be at least 1");
}

std::size_t BinningConfig::bin_of(double p) const {
    if (!(p > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(std::floor(p * static_cast<double>(n_bins))), n_bins - 1);
}

void KernelConfig::validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ConfigError("kernel bandwidth must be positive");
}

namespace {

void check_inputs(const Tensor2D& probs, std::span<const int> labels) {
    if (probs.rows != labels.size()) throw ConfigError("probability rows and labels differ in length");
    if (probs.rows == 0) throw ConfigError("metrics need at least one row");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols) {
            throw ConfigError("label " + std::to_string(y) + " out of range for " + std::to_string(probs.cols) +
                              " classes");
        }
    }
}

void check_embeddings(const Tensor2D& probs, const Tensor2D& embeddings) {
    if (embeddings.rows != probs.rows) throw ConfigError("embeddings and probabilities differ in row count");
}

std::size_t argmax_row(std::span<const float> p) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < p.size(); ++j) {
        if (p[j] > p[best]) best = j;
    }
    return best;
}

double kernel_value(std::span<const float> a, std::span<const float> b, double inv_two_gamma_sq) {
    double d2 = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        const double diff = static_cast<double>(a[t]) - b[t];
        d2 += diff * diff;
    }
    return std::exp(-d2 * inv_two_gamma_sq);
}

/// Per-class |freq - conf| mass per bin, for the rows' class-c probability.
struct ClassBins {
    std::vector<double> count, conf, hits;
};

ClassBins class_bins(const Tensor2D& probs, std::span<const int> labels, std::size_t cls, const BinningConfig& bins) {
    ClassBins b{std::vector<double>(bins.n_bins), std::vector<double>(bins.n_bins), std::vector<double>(bins.n_bins)};
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double p = probs(i, cls);
        const std::size_t k = bins.bin_of(p);
        b.count[k] += 1.0;
        b.conf[k] += p;
        if (static_cast<std::size_t>(labels[i]) == cls) b.hits[k] += 1.0;
    }
    return b;
}

}  // namespace

double ece(const Tensor2D& probs, std::span<const int> labels, const BinningConfig& bins) {
    check_inputs(probs, labels);
    bins.validate();
    std::vector<double> count(bins.n_bins), conf(bins.n_bins), correct(bins.n_bins);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const auto row = probs.row(i);
        const std::size_t pred = argmax_row(row);
        const std::size_t b = bins.bin_of(row[pred]);
        count[b] += 1.0;
        conf[b] += row[pred];
        if (pred == static_cast<std::size_t>(labels[i])) correct[b] += 1.0;
    }
    double total = 0.0;
    for (std::size_t b = 0; b < bins.n_bins; ++b) {
        if (count[b] == 0.0) continue;
        total += std::abs(correct[b] - conf[b]);
    }
    return total / static_cast<double>(probs.rows);
}

double classwise_ece(const Tensor2D& probs, std::span<const int> labels, const BinningConfig& bins) {
    check_inputs(probs, labels);
    bins.validate();
    double total = 0.0;
    for (std::size_t c = 0; c < probs.cols; ++c) {
        const ClassBins b = class_bins(probs, labels, c, bins);
        for (std::size_t k = 0; k < bins.n_bins; ++k) total += std::abs(b.hits[k] - b.conf[k]);
    }
    return total / static_cast<double>(probs.rows) / static_cast<double>(probs.cols);
}

double ecce_for_class(const Tensor2D& probs, std::span<const int> labels, std::size_t cls, const BinningConfig& bins) {
    check_inputs(probs, labels);
    bins.validate();
    if (cls >= probs.cols) throw ConfigError("class index out of range");
    const ClassBins b = class_bins(probs, labels, cls, bins);
    const double n = static_cast<double>(probs.rows);
    double running = 0.0, total = 0.0;
    for (std::size_t k = 0; k < bins.n_bins; ++k) {
        running += (b.hits[k] - b.conf[k]) / n;
        total += std::abs(running);
    }
    return total;
}

double ecce(const Tensor2D& probs, std::span<const int> labels, const BinningConfig& bins, ClassReduction reduction) {
    check_inputs(probs, labels);
    double acc = 0.0;
    for (std::size_t c = 0; c < probs.cols; ++c) {
        const double v = ecce_for_class(probs, labels, c, bins);
        acc = reduction == ClassReduction::Max ? std::max(acc, v) : acc + v;
    }
    return reduction == ClassReduction::Max ? acc : acc / static_cast<double>(probs.cols);
}

std::vector<double> local_residuals(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                                    const BinningConfig& bins, const KernelConfig& kernel) {
    check_inputs(probs, labels);
    check_embeddings(probs, embeddings);
    bins.validate();
    kernel.validate();
    const std::size_t n = probs.rows, k = probs.cols;

    std::vector<std::vector<std::size_t>> members(bins.n_bins);
    std::vector<std::size_t> bin_of_row(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = probs.row(i);
        bin_of_row[i] = bins.bin_of(row[argmax_row(row)]);
        members[bin_of_row[i]].push_back(i);
    }
    const double inv = 1.0 / (2.0 * kernel.bandwidth * kernel.bandwidth);
    std::vector<double> out(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> acc(k);
        for (std::size_t i = begin; i < end; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            double wsum = 0.0;
            const auto xi = embeddings.row(i);
            for (std::size_t j : members[bin_of_row[i]]) {
                const double kij = kernel_value(xi, embeddings.row(j), inv);
                wsum += kij;
                const auto pj = probs.row(j);
                const auto yj = static_cast<std::size_t>(labels[j]);
                for (std::size_t c = 0; c < k; ++c) acc[c] += kij * (pj[c] - (c == yj ? 1.0 : 0.0));
            }
            double l1 = 0.0;
            for (double a : acc) l1 += std::abs(a);
            out[i] = l1 / wsum;
        }
    });
    return out;
}

double lce(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings, const BinningConfig& bins,
           const KernelConfig& kernel) {
    const auto r = local_residuals(probs, labels, embeddings, bins, kernel);
    const double sum = std::accumulate(r.begin(), r.end(), 0.0);
    return sum / static_cast<double>(r.size()) / static_cast<double>(probs.cols);
}

double mlce(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings, const BinningConfig& bins,
            const KernelConfig& kernel) {
    const auto r = local_residuals(probs, labels, embeddings, bins, kernel);
    return *std::max_element(r.begin(), r.end());
}

EssAnalysis ess_analysis(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                         const KernelConfig& kernel, std::size_t n_quantile_bins) {
    check_inputs(probs, labels);
    check_embeddings(probs, embeddings);
    kernel.validate();
    const std::size_t n = probs.rows, k = probs.cols;
    if (n_quantile_bins == 0) throw ConfigError("ESS analysis needs at least one quantile bin");
    if (n < n_quantile_bins) {
        throw ConfigError("ESS analysis needs at least as many rows (" + std::to_string(n) + ") as bins (" +
                          std::to_string(n_quantile_bins) + ")");
    }
    const double inv = 1.0 / (2.0 * kernel.bandwidth * kernel.bandwidth);
    EssAnalysis out;
    out.ess.resize(n);
    out.residual.resize(n);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        std::vector<double> acc(k);
        for (std::size_t i = begin; i < end; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            double s1 = 0.0, s2 = 0.0;
            const auto xi = embeddings.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double kij = kernel_value(xi, embeddings.row(j), inv);
                s1 += kij;
                s2 += kij * kij;
                const auto pj = probs.row(j);
                const auto yj = static_cast<std::size_t>(labels[j]);
                for (std::size_t c = 0; c < k; ++c) acc[c] += kij * (pj[c] - (c == yj ? 1.0 : 0.0));
            }
            double l1 = 0.0;
            for (double a : acc) l1 += std::abs(a);
            out.ess[i] = s1 * s1 / s2;
            out.residual[i] = l1 / s1;
        }
    });

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return out.ess[a] < out.ess[b]; });
    for (std::size_t q = 0; q < n_quantile_bins; ++q) {
        const std::size_t lo = q * n / n_quantile_bins, hi = (q + 1) * n / n_quantile_bins;
        EssBin bin;
        bin.quantile = static_cast<double>(q + 1) / static_cast<double>(n_quantile_bins);
        bin.count = hi - lo;
        for (std::size_t t = lo; t < hi; ++t) {
            bin.mean_ess += out.ess[order[t]];
            bin.mean_residual += out.residual[order[t]];
        }
        if (bin.count > 0) {
            bin.mean_ess /= static_cast<double>(bin.count);
            bin.mean_residual /= static_cast<double>(bin.count);
        }
        out.bins.push_back(bin);
    }
    return out;
}

std::vector<EssBin> ess_curve(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                              const KernelConfig& kernel, std::size_t n_quantile_bins) {
    return ess_analysis(probs, labels, embeddings, kernel, n_quantile_bins).bins;
}

double nll(const Tensor2D& probs, std::span<const int> labels) {
    check_inputs(probs, labels);
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        total -= std::log(std::max<double>(probs(i, static_cast<std::size_t>(labels[i])), kProbFloor));
    }
    return total / static_cast<double>(probs.rows);
}

double accuracy(const Tensor2D& probs, std::span<const int> labels) {
    check_inputs(probs, labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        if (argmax_row(probs.row(i)) == static_cast<std::size_t>(labels[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probs.rows);
}

MetricsReport evaluate(const Tensor2D& probs, std::span<const int> labels, const Tensor2D& embeddings,
                       const MetricsOptions& opts) {
    if (!probs.all_finite()) throw NumericalError("evaluated probabilities contain non-finite values");
    MetricsReport r;
    r.ece = ece(probs, labels, opts.bins);
    r.classwise_ece = classwise_ece(probs, labels, opts.bins);
    r.ecce = ecce(probs, labels, opts.bins, opts.ecce_reduction);
    const auto local = local_residuals(probs, labels, embeddings, opts.bins, opts.kernel);
    r.lce = std::accumulate(local.begin(), local.end(), 0.0) / static_cast<double>(local.size()) /
            static_cast<double>(probs.cols);
    r.mlce = *std::max_element(local.begin(), local.end());
    r.nll = nll(probs, labels);
    r.acc = accuracy(probs, labels);
    if (opts.ess_bins > 0) r.ess_curve = ess_curve(probs, labels, embeddings, opts.kernel, opts.ess_bins);
    return r;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& b : r.ess_curve) {
        curve.push_back({{"quantile", b.quantile},
                         {"mean_ess", b.mean_ess},
                         {"mean_residual", b.mean_residual},
                         {"count", b.count}});
    }
    return {{"ece", r.ece},   {"classwise_ece", r.classwise_ece}, {"ecce", r.ecce}, {"lce", r.lce},
            {"mlce", r.mlce}, {"nll", r.nll},                     {"acc", r.acc},   {"ess_curve", curve}};
}

}  // namespace vqcal
