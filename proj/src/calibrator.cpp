#include "vqcal/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/parallel.hpp"

namespace vqcal {

double identity_offset() { return std::log(std::numbers::e - 1.0); }

std::size_t CalibratorParams::trainable_parameter_count() const {
    return A.data.size() + B.data.size() + sigma2.size();
}

CalibratorParams init_calibrator(std::size_t codebook_size, std::size_t n_classes, std::size_t w, Rng& rng,
                                 bool strict_identity) {
    if (codebook_size == 0 || n_classes == 0 || w == 0) throw ConfigError("init_calibrator: empty dimensions");
    CalibratorParams p;
    p.A = Tensor2D(codebook_size, n_classes);
    p.B = Tensor2D(codebook_size, n_classes);
    for (float& v : p.A.data) v = static_cast<float>(rng.uniform(-0.01, 0.01));
    for (float& v : p.B.data) v = static_cast<float>(rng.uniform(-0.01, 0.01));
    if (strict_identity) std::fill(p.B.data.begin(), p.B.data.end(), 0.0f);
    p.sigma2.assign(w, 1.0f);
    p.beta.assign(n_classes, 0.0f);
    p.offset = identity_offset();
    p.strict_identity = strict_identity;
    return p;
}

namespace {

void check_cell(std::span<const CodeIndex> s, const CalibratorParams& params) {
    if (s.size() != params.slots()) {
        throw ConfigError("index sequence length " + std::to_string(s.size()) + " != w " +
                          std::to_string(params.slots()));
    }
    for (CodeIndex k : s) {
        if (k >= params.codebook_size()) {
            throw ConfigError("codeword index " + std::to_string(k) + " out of range for calibration codebook of size " +
                              std::to_string(params.codebook_size()));
        }
    }
}

/// pre[j, i] = offset + sum_t sigma_t A[s_t, j] B[s_t, i]
void pre_activation(std::span<const CodeIndex> s, const double* A, const double* B, const double* sigma,
                    std::size_t n_classes, double offset, std::span<double> pre) {
    std::fill(pre.begin(), pre.end(), offset);
    for (std::size_t t = 0; t < s.size(); ++t) {
        const double* a = A + static_cast<std::size_t>(s[t]) * n_classes;
        const double* b = B + static_cast<std::size_t>(s[t]) * n_classes;
        for (std::size_t j = 0; j < n_classes; ++j) {
            const double sa = sigma[t] * a[j];
            double* row = pre.data() + j * n_classes;
            for (std::size_t i = 0; i < n_classes; ++i) row[i] += sa * b[i];
        }
    }
}

}  // namespace

std::pair<Tensor2D, Tensor2D> select_factors(const IndexSequence& s, const CalibratorParams& params) {
    check_cell(s.s, params);
    const auto idx = std::vector<std::size_t>(s.s.begin(), s.s.end());
    return {params.A.gather_rows(idx), params.B.gather_rows(idx)};
}

void cell_weight_matrix(std::span<const CodeIndex> s, const CalibratorParams& params, std::span<double> out) {
    check_cell(s, params);
    const std::size_t k = params.n_classes();
    if (out.size() != k * k) throw ConfigError("cell_weight_matrix: output size mismatch");
    const std::vector<double> A(params.A.data.begin(), params.A.data.end());
    const std::vector<double> B(params.B.data.begin(), params.B.data.end());
    const std::vector<double> sigma(params.sigma2.begin(), params.sigma2.end());
    pre_activation(s, A.data(), B.data(), sigma.data(), k, params.offset, out);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < k; ++i) {
            double& m = out[j * k + i];
            m = softplus(m) - 1.0 + (i == j ? 1.0 : 0.0);
        }
    }
}

Tensor2D cell_alpha_minus_one(const IndexSequence& s, const CalibratorParams& params) {
    const std::size_t k = params.n_classes();
    std::vector<double> m(k * k);
    cell_weight_matrix(s.s, params, m);
    Tensor2D out(k, k);
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = static_cast<float>(m[i]);
    return out;
}

std::vector<double> log_linear_posterior(std::span<const double> bias, std::span<const double> weights,
                                         std::span<const double> log_p) {
    const std::size_t k = log_p.size();
    if (bias.size() != k || weights.size() != k * k) throw ConfigError("log_linear_posterior: shape mismatch");
    std::vector<double> logits(k);
    for (std::size_t j = 0; j < k; ++j) {
        double z = bias[j];
        for (std::size_t i = 0; i < k; ++i) z += weights[j * k + i] * log_p[i];
        logits[j] = z;
    }
    log_softmax_inplace(logits);
    return logits;
}

std::vector<double> clamped_log(std::span<const float> probs) {
    std::vector<double> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = std::log(std::max<double>(probs[i], kProbFloor));
    return out;
}

std::vector<double> calibrated_log_posterior(std::span<const double> log_p_hat, const IndexSequence& s,
                                             const CalibratorParams& params) {
    const std::size_t k = params.n_classes();
    if (log_p_hat.size() != k) throw ConfigError("calibrated_log_posterior: expected " + std::to_string(k) + " classes");
    for (double v : log_p_hat) {
        if (!std::isfinite(v)) throw NumericalError("calibrated_log_posterior: non-finite input");
    }
    std::vector<double> m(k * k);
    cell_weight_matrix(s.s, params, m);
    std::vector<double> bias(params.beta.begin(), params.beta.end());
    if (params.cell_prior_mode == CellPrior::Empirical) {
        if (auto it = params.cell_prior.find(s); it != params.cell_prior.end()) {
            for (std::size_t j = 0; j < k; ++j) bias[j] += it->second[j];
        }
    }
    return log_linear_posterior(bias, m, log_p_hat);
}

std::vector<double> calibrator_to_params(const CalibratorParams& p) {
    std::vector<double> flat;
    flat.reserve(p.A.data.size() * 2 + p.beta.size() + p.sigma2.size());
    flat.insert(flat.end(), p.A.data.begin(), p.A.data.end());
    flat.insert(flat.end(), p.B.data.begin(), p.B.data.end());
    flat.insert(flat.end(), p.beta.begin(), p.beta.end());
    for (float s : p.sigma2) flat.push_back(std::log(static_cast<double>(s)));
    return flat;
}

void calibrator_from_params(std::span<const double> flat, CalibratorParams& p) {
    const std::size_t ck = p.A.data.size();
    if (flat.size() != 2 * ck + p.beta.size() + p.sigma2.size()) {
        throw ConfigError("calibrator_from_params: parameter count mismatch");
    }
    for (std::size_t i = 0; i < ck; ++i) {
        p.A.data[i] = static_cast<float>(flat[i]);
        p.B.data[i] = static_cast<float>(flat[ck + i]);
    }
    for (std::size_t j = 0; j < p.beta.size(); ++j) p.beta[j] = static_cast<float>(flat[2 * ck + j]);
    for (std::size_t t = 0; t < p.sigma2.size(); ++t) {
        p.sigma2[t] = static_cast<float>(std::exp(flat[2 * ck + p.beta.size() + t]));
    }
}

std::vector<std::uint8_t> calibrator_decay_mask(const CalibratorParams& p) {
    std::vector<std::uint8_t> mask(2 * p.A.data.size() + p.beta.size() + p.sigma2.size(), 1);
    std::fill(mask.end() - static_cast<std::ptrdiff_t>(p.sigma2.size()), mask.end(), 0);
    return mask;
}

double calibrator_loss_and_grad(std::span<const double> flat, const CalibratorParams& shape,
                                const CalibrationBatchData& data, std::span<const std::size_t> rows,
                                std::span<double> grad) {
    const std::size_t k = shape.n_classes();
    const std::size_t ck = shape.A.data.size();
    const std::size_t w = shape.slots();
    if (flat.size() != 2 * ck + k + w) throw ConfigError("calibrator_loss_and_grad: parameter count mismatch");
    if (data.n_classes != k || data.cells == nullptr) throw ConfigError("calibrator_loss_and_grad: bad batch data");
    if (rows.empty()) return 0.0;

    const double* A = flat.data();
    const double* B = flat.data() + ck;
    const double* beta = flat.data() + 2 * ck;
    const double* log_sigma = flat.data() + 2 * ck + k;
    std::vector<double> sigma(w);
    for (std::size_t t = 0; t < w; ++t) sigma[t] = std::exp(log_sigma[t]);

    double* gA = grad.empty() ? nullptr : grad.data();
    double* gB = grad.empty() ? nullptr : grad.data() + ck;
    double* gbeta = grad.empty() ? nullptr : grad.data() + 2 * ck;
    double* gsig = grad.empty() ? nullptr : grad.data() + 2 * ck + k;

    const double inv_n = 1.0 / static_cast<double>(rows.size());
    std::vector<double> pre(k * k), logits(k), g(k), G(k * k), u(k), v(k);
    double loss = 0.0;
    for (std::size_t r : rows) {
        const auto cell = data.cells->row(r);
        const double* lp = data.log_probs.data() + r * k;
        pre_activation(cell, A, B, sigma.data(), k, shape.offset, pre);
        for (std::size_t j = 0; j < k; ++j) {
            double z = beta[j];
            if (!data.prior.empty()) z += data.prior[r * k + j];
            for (std::size_t i = 0; i < k; ++i) {
                z += (softplus(pre[j * k + i]) - 1.0 + (i == j ? 1.0 : 0.0)) * lp[i];
            }
            logits[j] = z;
        }
        log_softmax_inplace(logits);
        const auto y = static_cast<std::size_t>(data.labels[r]);
        loss -= logits[y];
        if (grad.empty()) continue;

        for (std::size_t j = 0; j < k; ++j) {
            g[j] = (std::exp(logits[j]) - (j == y ? 1.0 : 0.0)) * inv_n;
            gbeta[j] += g[j];
            for (std::size_t i = 0; i < k; ++i) G[j * k + i] = g[j] * lp[i] * sigmoid(pre[j * k + i]);
        }
        for (std::size_t t = 0; t < w; ++t) {
            const std::size_t row = static_cast<std::size_t>(cell[t]) * k;
            const double* a = A + row;
            const double* b = B + row;
            // v_j = sum_i G[j,i] b_i ; u_i = sum_j G[j,i] a_j
            std::fill(u.begin(), u.end(), 0.0);
            double dsig = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                double vj = 0.0;
                for (std::size_t i = 0; i < k; ++i) {
                    vj += G[j * k + i] * b[i];
                    u[i] += G[j * k + i] * a[j];
                }
                v[j] = vj;
                dsig += a[j] * vj;
            }
            for (std::size_t j = 0; j < k; ++j) {
                gA[row + j] += sigma[t] * v[j];
                gB[row + j] += sigma[t] * u[j];
            }
            if (shape.learn_sigma) gsig[t] += sigma[t] * dsig;
        }
    }
    return loss * inv_n;
}

std::map<IndexSequence, std::vector<float>> empirical_cell_prior(const Assignments& cells,
                                                                 std::span<const int> labels,
                                                                 std::size_t n_classes) {
    std::map<IndexSequence, std::vector<double>> counts;
    for (std::size_t i = 0; i < cells.rows(); ++i) {
        auto& c = counts[cells.cell(i)];
        if (c.empty()) c.assign(n_classes, 0.0);
        c[static_cast<std::size_t>(labels[i])] += 1.0;
    }
    std::map<IndexSequence, std::vector<float>> prior;
    for (const auto& [cell, c] : counts) {
        double total = 0.0;
        for (double v : c) total += v;
        std::vector<float> lp(n_classes);
        for (std::size_t j = 0; j < n_classes; ++j) {
            lp[j] = static_cast<float>(std::log((c[j] + 1.0) / (total + static_cast<double>(n_classes))));
        }
        prior.emplace(cell, std::move(lp));
    }
    return prior;
}

namespace {

CalibrationBatchData make_batch_data(const VqScores& scores, std::span<const int> labels,
                                     const CalibratorParams& params) {
    CalibrationBatchData d;
    d.n_classes = params.n_classes();
    d.cells = &scores.cells;
    d.labels = labels;
    d.log_probs.reserve(scores.probs.data.size());
    for (float p : scores.probs.data) d.log_probs.push_back(std::log(std::max<double>(p, kProbFloor)));
    if (params.cell_prior_mode == CellPrior::Empirical) {
        d.prior.assign(scores.probs.data.size(), 0.0);
        for (std::size_t i = 0; i < scores.cells.rows(); ++i) {
            if (auto it = params.cell_prior.find(scores.cells.cell(i)); it != params.cell_prior.end()) {
                for (std::size_t j = 0; j < d.n_classes; ++j) d.prior[i * d.n_classes + j] = it->second[j];
            }
        }
    }
    return d;
}

}  // namespace

Stage2Result train_stage2(const CalibrationDataset& ds, const Codebook& codebook, const LinearHead& head,
                          const SegmentationConfig& seg, CalibratorParams params, const TrainConfig& cfg) {
    cfg.validate();
    if (params.n_classes() != ds.n_classes()) throw ConfigError("train_stage2: class count mismatch");
    if (params.slots() != seg.w) throw ConfigError("train_stage2: sigma^2 length does not match w");
    if (params.codebook_size() != codebook.size()) throw ConfigError("train_stage2: calibration codebook size mismatch");
    const CalibrationDataset train = ds.subset(Split::TrainCal);
    const CalibrationDataset val = ds.subset(Split::ValCal);
    if (train.size() == 0 || val.size() == 0) throw ConfigError("train_stage2: train_cal and val_cal must be non-empty");

    const VqScores train_scores = vq_scores(train.embeddings, codebook, head, seg);
    const VqScores val_scores = vq_scores(val.embeddings, codebook, head, seg);
    if (params.cell_prior_mode == CellPrior::Empirical) {
        params.cell_prior = empirical_cell_prior(train_scores.cells, train.labels, ds.n_classes());
    }
    const CalibrationBatchData train_data = make_batch_data(train_scores, train.labels, params);
    const CalibrationBatchData val_data = make_batch_data(val_scores, val.labels, params);
    std::vector<std::size_t> val_rows(val.size());
    for (std::size_t i = 0; i < val_rows.size(); ++i) val_rows[i] = i;

    std::vector<double> flat = calibrator_to_params(params);
    const auto mask = calibrator_decay_mask(params);
    MinibatchProblem problem;
    problem.n_train = train.size();
    problem.loss_grad = [&](std::span<const std::size_t> batch, std::span<const double> p, std::span<double> grad) {
        return calibrator_loss_and_grad(p, params, train_data, batch, grad);
    };
    problem.val_loss = [&](std::span<const double> p) {
        return calibrator_loss_and_grad(p, params, val_data, val_rows, {});
    };
    TrainingLog log = train_minibatch(flat, mask, problem, cfg);
    calibrator_from_params(flat, params);
    return Stage2Result{std::move(params), std::move(log)};
}

Tensor2D calibrate_scores(const VqScores& scores, const CalibratorParams& params) {
    const std::size_t k = params.n_classes();
    if (scores.probs.cols != k) throw ConfigError("calibrate_scores: class count mismatch");
    Tensor2D out(scores.probs.rows, k);
    parallel_for(scores.probs.rows, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto lp = calibrated_log_posterior(clamped_log(scores.probs.row(i)), scores.cells.cell(i), params);
            for (std::size_t j = 0; j < k; ++j) out(i, j) = static_cast<float>(std::exp(lp[j]));
        }
    });
    return out;
}

Tensor2D predict(const Tensor2D& embeddings, const Codebook& codebook, const LinearHead& head,
                 const SegmentationConfig& seg, const CalibratorParams& params) {
    return calibrate_scores(vq_scores(embeddings, codebook, head, seg), params);
}

}  // namespace vqcal
