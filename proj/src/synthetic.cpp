#include "vqcal/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/rng.hpp"

namespace vqcal {

using nlohmann::json;

void SyntheticSpec::validate() const {
    if (n_regions < 2) throw ConfigError("synthetic spec: n_regions must be >= 2");
    if (n_classes < 2) throw ConfigError("synthetic spec: n_classes must be >= 2");
    if (slots == 0 || dim % slots != 0) {
        throw ConfigError("synthetic spec: dim " + std::to_string(dim) + " not divisible by slots " +
                          std::to_string(slots));
    }
    if (dim / slots < 2) throw ConfigError("synthetic spec: slot dimension must be >= 2");
    if (n_regions > slots) throw ConfigError("synthetic spec: n_regions must not exceed slots");
    if (confusions.size() != n_regions) {
        throw ConfigError("synthetic spec: expected " + std::to_string(n_regions) + " confusion matrices");
    }
    for (std::size_t r = 0; r < n_regions; ++r) {
        if (confusions[r].size() != n_classes) throw ConfigError("synthetic spec: confusion matrix has wrong row count");
        for (const auto& row : confusions[r]) {
            if (row.size() != n_classes) throw ConfigError("synthetic spec: confusion row has wrong length");
            double sum = 0.0;
            for (double v : row) {
                if (!(v >= 0.0)) throw ConfigError("synthetic spec: negative confusion entry");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw ConfigError("synthetic spec: confusion row of region " + std::to_string(r) +
                                  " does not sum to 1");
            }
        }
    }
    if (!region_weights.empty()) {
        if (region_weights.size() != n_regions) throw ConfigError("synthetic spec: region_weights length mismatch");
        for (double w : region_weights) {
            if (!(w > 0.0)) throw ConfigError("synthetic spec: region weights must be positive");
        }
    }
    if (!(class_shift >= 0.0)) throw ConfigError("synthetic spec: class_shift must be non-negative");
    if (samples_per_split[0] == 0) throw ConfigError("synthetic spec: train split must be non-empty");
    // Distinct slot counts per region are what separates the centers.
    const auto counts = region_slot_counts(n_regions, slots);
    if (std::set<std::size_t>(counts.begin(), counts.end()).size() != counts.size()) {
        throw ConfigError("synthetic spec: too many regions for the slot count");
    }
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("synthetic spec: expected a JSON object");
    SyntheticSpec s;
    try {
        s.n_regions = j.at("n_regions").get<std::size_t>();
        s.n_classes = j.at("n_classes").get<std::size_t>();
        s.dim = j.at("dim").get<std::size_t>();
        s.slots = j.value("slots", s.slots);
        if (j.contains("samples_per_split")) {
            const auto v = j.at("samples_per_split").get<std::vector<std::size_t>>();
            if (v.size() != 3) throw ConfigError("synthetic spec: samples_per_split needs three counts");
            s.samples_per_split = {v[0], v[1], v[2]};
        }
        s.confusions = j.at("confusions").get<std::vector<std::vector<std::vector<double>>>>();
        s.region_weights = j.value("region_weights", std::vector<double>{});
        s.class_shift = j.value("class_shift", s.class_shift);
        s.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

json to_json(const SyntheticSpec& s) {
    return json{{"n_regions", s.n_regions},
                {"n_classes", s.n_classes},
                {"dim", s.dim},
                {"slots", s.slots},
                {"samples_per_split", s.samples_per_split},
                {"confusions", s.confusions},
                {"region_weights", s.region_weights},
                {"class_shift", s.class_shift},
                {"seed", s.seed}};
}

SyntheticSpec benchmark_spec(std::uint64_t seed) {
    SyntheticSpec s;
    s.seed = seed;
    s.region_weights = {0.4, 0.3, 0.2, 0.1};
    const std::size_t k = 4;
    auto filled = [&](double diag, double off) {
        std::vector<std::vector<double>> m(k, std::vector<double>(k, off));
        for (std::size_t i = 0; i < k; ++i) m[i][i] = diag;
        return m;
    };
    auto sharp = filled(0.85, 0.05);
    auto noisy = filled(0.6, 0.4 / 3.0);
    std::vector<std::vector<double>> shifted(k, std::vector<double>(k, 0.1));
    std::vector<std::vector<double>> reversed(k, std::vector<double>(k, 0.2 / 3.0));
    for (std::size_t i = 0; i < k; ++i) {
        shifted[i][(i + 1) % k] = 0.7;
        reversed[i][k - 1 - i] = 0.8;
    }
    s.confusions = {sharp, noisy, shifted, reversed};
    return s;
}

std::vector<std::size_t> region_slot_counts(std::size_t n_regions, std::size_t slots) {
    std::vector<std::size_t> counts(n_regions);
    for (std::size_t r = 0; r < n_regions; ++r) {
        counts[r] = static_cast<std::size_t>(
            std::round((static_cast<double>(r) + 0.5) * static_cast<double>(slots) / static_cast<double>(n_regions)));
    }
    return counts;
}

double region_center_scale(std::size_t n_regions, std::size_t slots, std::size_t dim) {
    const auto counts = region_slot_counts(n_regions, slots);
    std::size_t min_diff = std::numeric_limits<std::size_t>::max();
    for (std::size_t a = 0; a < counts.size(); ++a) {
        for (std::size_t b = a + 1; b < counts.size(); ++b) {
            const std::size_t d = counts[a] > counts[b] ? counts[a] - counts[b] : counts[b] - counts[a];
            min_diff = std::min(min_diff, d);
        }
    }
    // Differing slots contribute (2s)^2 each; 5% margin over 10*sqrt(dim).
    return 1.05 * 10.0 * std::sqrt(static_cast<double>(dim)) / (2.0 * std::sqrt(static_cast<double>(min_diff)));
}

namespace {

std::vector<std::vector<double>> class_directions(const SyntheticSpec& spec) {
    const std::size_t d = spec.dim / spec.slots;
    const std::size_t free_dims = d - 1;
    std::vector<std::vector<double>> dirs(spec.n_classes, std::vector<double>(d, 0.0));
    if (spec.n_classes <= 2 * free_dims) {
        for (std::size_t c = 0; c < spec.n_classes; ++c) {
            dirs[c][1 + c / 2] = (c % 2 == 0) ? 1.0 : -1.0;
        }
        return dirs;
    }
    Rng rng(spec.seed ^ 0x5eed'c1a5'5d1eULL);
    for (auto& dir : dirs) {
        double norm = 0.0;
        for (std::size_t k = 1; k < d; ++k) {
            dir[k] = rng.normal();
            norm += dir[k] * dir[k];
        }
        norm = std::sqrt(norm);
        for (std::size_t k = 1; k < d; ++k) dir[k] /= norm;
    }
    return dirs;
}

/// Pooled multinomial logistic regression on standardized features, full-batch
/// Adam. Deterministic; returns class probabilities for every row.
Tensor2D pooled_logistic_probs(const Tensor2D& x, const std::vector<int>& y, std::size_t n_train,
                               std::size_t n_classes) {
    const std::size_t dim = x.cols;
    std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
        for (std::size_t k = 0; k < dim; ++k) mean[k] += x(i, k);
    }
    for (double& m : mean) m /= static_cast<double>(n_train);
    for (std::size_t i = 0; i < n_train; ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
            const double dv = x(i, k) - mean[k];
            scale[k] += dv * dv;
        }
    }
    for (double& s : scale) s = std::max(1e-6, std::sqrt(s / static_cast<double>(n_train)));

    auto features = [&](std::size_t i, std::vector<double>& f) {
        for (std::size_t k = 0; k < dim; ++k) f[k] = (x(i, k) - mean[k]) / scale[k];
    };

    // params: W (n_classes x dim) then bias.
    const std::size_t n_w = n_classes * dim;
    std::vector<double> params(n_w + n_classes, 0.0);
    std::vector<double> grad(params.size());
    AdamState adam(params.size(), 0.05, 0.0);
    constexpr double l2 = 1e-4;
    constexpr int iterations = 500;
    std::vector<double> f(dim), logits(n_classes);
    for (int it = 0; it < iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n_train; ++i) {
            features(i, f);
            for (std::size_t c = 0; c < n_classes; ++c) {
                double z = params[n_w + c];
                for (std::size_t k = 0; k < dim; ++k) z += params[c * dim + k] * f[k];
                logits[c] = z;
            }
            log_softmax_inplace(logits);
            for (std::size_t c = 0; c < n_classes; ++c) {
                const double g = std::exp(logits[c]) - (static_cast<int>(c) == y[i] ? 1.0 : 0.0);
                for (std::size_t k = 0; k < dim; ++k) grad[c * dim + k] += g * f[k];
                grad[n_w + c] += g;
            }
        }
        const double inv_n = 1.0 / static_cast<double>(n_train);
        for (std::size_t p = 0; p < params.size(); ++p) {
            grad[p] *= inv_n;
            if (p < n_w) grad[p] += 2.0 * l2 * params[p];
        }
        adam_step(adam, params, grad);
    }

    Tensor2D probs(x.rows, n_classes);
    for (std::size_t i = 0; i < x.rows; ++i) {
        features(i, f);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double z = params[n_w + c];
            for (std::size_t k = 0; k < dim; ++k) z += params[c * dim + k] * f[k];
            logits[c] = z;
        }
        log_softmax_inplace(logits);
        for (std::size_t c = 0; c < n_classes; ++c) probs(i, c) = static_cast<float>(std::exp(logits[c]));
    }
    return probs;
}

}  // namespace

CalibrationDataset make_synthetic(const SyntheticSpec& spec, std::vector<std::size_t>& regions) {
    spec.validate();
    const std::size_t d = spec.dim / spec.slots;
    const auto counts = region_slot_counts(spec.n_regions, spec.slots);
    const double scale = region_center_scale(spec.n_regions, spec.slots, spec.dim);
    const auto dirs = class_directions(spec);
    std::vector<double> weights = spec.region_weights;
    if (weights.empty()) weights.assign(spec.n_regions, 1.0);

    const std::size_t n = spec.samples_per_split[0] + spec.samples_per_split[1] + spec.samples_per_split[2];
    CalibrationDataset ds;
    ds.embeddings = Tensor2D(n, spec.dim);
    ds.labels.resize(n);
    ds.split_tags.resize(n);
    regions.assign(n, 0);

    Rng rng(spec.seed);
    std::size_t row = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < spec.samples_per_split[s]; ++k, ++row) {
            const std::size_t region = rng.categorical(weights);
            const auto latent = static_cast<std::size_t>(rng.below(spec.n_classes));
            auto z = ds.embeddings.row(row);
            for (std::size_t slot = 0; slot < spec.slots; ++slot) {
                const double sign = slot < counts[region] ? 1.0 : -1.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double v = rng.normal() + spec.class_shift * dirs[latent][j];
                    if (j == 0) v += sign * scale;
                    z[slot * d + j] = static_cast<float>(v);
                }
            }
            ds.labels[row] = static_cast<int>(rng.categorical(spec.confusions[region][latent]));
            ds.split_tags[row] = static_cast<Split>(s);
            regions[row] = region;
        }
    }
    ds.base_probs = pooled_logistic_probs(ds.embeddings, ds.labels, spec.samples_per_split[0], spec.n_classes);
    validate_dataset(ds);
    return ds;
}

CalibrationDataset make_synthetic(const SyntheticSpec& spec) {
    std::vector<std::size_t> regions;
    return make_synthetic(spec, regions);
}

}  // namespace vqcal
