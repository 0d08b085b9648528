#include "vqcal/vqhead.hpp"

#include <cmath>
#include <string>

#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/parallel.hpp"

namespace vqcal {

LinearHead LinearHead::zeros(std::size_t n_classes, std::size_t m_prime) {
    return LinearHead{Tensor2D(n_classes, m_prime), std::vector<float>(n_classes, 0.0f)};
}

std::vector<double> head_forward(std::span<const float> q, const LinearHead& head) {
    if (q.size() != head.input_dim()) {
        throw ConfigError("head_forward: input dimension " + std::to_string(q.size()) + " != " +
                          std::to_string(head.input_dim()));
    }
    std::vector<double> logits(head.n_classes());
    for (std::size_t c = 0; c < logits.size(); ++c) {
        double z = head.bias[c];
        const auto w = head.weight.row(c);
        for (std::size_t k = 0; k < q.size(); ++k) z += static_cast<double>(w[k]) * q[k];
        logits[c] = z;
    }
    log_softmax_inplace(logits);
    return logits;
}

std::vector<double> head_to_params(const LinearHead& head) {
    std::vector<double> p(head.weight.data.begin(), head.weight.data.end());
    p.insert(p.end(), head.bias.begin(), head.bias.end());
    return p;
}

LinearHead head_from_params(std::span<const double> params, std::size_t n_classes, std::size_t m_prime) {
    if (params.size() != n_classes * (m_prime + 1)) throw ConfigError("head_from_params: parameter count mismatch");
    LinearHead h = LinearHead::zeros(n_classes, m_prime);
    for (std::size_t i = 0; i < n_classes * m_prime; ++i) h.weight.data[i] = static_cast<float>(params[i]);
    for (std::size_t c = 0; c < n_classes; ++c) h.bias[c] = static_cast<float>(params[n_classes * m_prime + c]);
    return h;
}

double head_loss_and_grad(std::span<const double> params, std::size_t n_classes, const Tensor2D& q,
                          std::span<const int> labels, std::span<const std::size_t> rows, std::span<double> grad) {
    const std::size_t m = q.cols;
    const std::size_t n_w = n_classes * m;
    if (params.size() != n_w + n_classes) throw ConfigError("head_loss_and_grad: parameter count mismatch");
    if (rows.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    std::vector<double> logits(n_classes);
    double loss = 0.0;
    for (std::size_t r : rows) {
        const auto x = q.row(r);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double z = params[n_w + c];
            const double* w = params.data() + c * m;
            for (std::size_t k = 0; k < m; ++k) z += w[k] * x[k];
            logits[c] = z;
        }
        log_softmax_inplace(logits);
        const auto y = static_cast<std::size_t>(labels[r]);
        loss -= logits[y];
        if (grad.empty()) continue;
        for (std::size_t c = 0; c < n_classes; ++c) {
            const double g = (std::exp(logits[c]) - (c == y ? 1.0 : 0.0)) * inv_n;
            double* gw = grad.data() + c * m;
            for (std::size_t k = 0; k < m; ++k) gw[k] += g * x[k];
            grad[n_w + c] += g;
        }
    }
    return loss * inv_n;
}

Stage1Result train_stage1(const CalibrationDataset& ds, Codebook codebook, LinearHead head,
                          const SegmentationConfig& seg, const TrainConfig& cfg) {
    seg.validate();
    cfg.validate();
    if (ds.dim() != seg.m_prime) throw ConfigError("train_stage1: embedding dimension does not match segmentation");
    if (head.input_dim() != seg.m_prime || head.n_classes() != ds.n_classes()) {
        throw ConfigError("train_stage1: head shape does not match data");
    }
    const CalibrationDataset train = ds.subset(Split::TrainCal);
    const CalibrationDataset val = ds.subset(Split::ValCal);
    if (train.size() == 0 || val.size() == 0) throw ConfigError("train_stage1: train_cal and val_cal must be non-empty");

    const std::size_t n_classes = ds.n_classes();
    std::vector<double> params = head_to_params(head);
    std::vector<std::uint8_t> decay_mask;  // decay all

    // Quantized training rows are refreshed per batch with the current codebook.
    Tensor2D q_train(train.size(), seg.m_prime);
    Tensor2D batch_slots;
    std::vector<CodeIndex> batch_assign;
    Codebook best_codebook = codebook;

    MinibatchProblem problem;
    problem.n_train = train.size();
    problem.loss_grad = [&](std::span<const std::size_t> batch, std::span<const double> p, std::span<double> grad) {
        batch_slots = Tensor2D(batch.size() * seg.w, seg.d);
        batch_assign.resize(batch.size() * seg.w);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto z = train.embeddings.row(batch[b]);
            auto q = q_train.row(batch[b]);
            for (std::size_t s = 0; s < seg.w; ++s) {
                const auto slot = z.subspan(s * seg.d, seg.d);
                const CodeIndex k = nearest_codeword(slot, codebook).index;
                batch_assign[b * seg.w + s] = k;
                std::copy(slot.begin(), slot.end(), batch_slots.row(b * seg.w + s).begin());
                const auto c = codebook.codewords.row(k);
                std::copy(c.begin(), c.end(), q.begin() + static_cast<std::ptrdiff_t>(s * seg.d));
            }
        }
        return head_loss_and_grad(p, n_classes, q_train, train.labels, batch, grad);
    };
    problem.after_step = [&](std::span<const std::size_t>) { ema_update(codebook, batch_slots, batch_assign); };
    problem.val_loss = [&](std::span<const double> p) {
        const Assignments a = assign_rows(val.embeddings, seg, codebook);
        const Tensor2D q = select_codewords(a, codebook);
        std::vector<std::size_t> all(val.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return head_loss_and_grad(p, n_classes, q, val.labels, all, {});
    };
    problem.on_new_best = [&] { best_codebook = codebook; };

    TrainingLog log = train_minibatch(params, decay_mask, problem, cfg);
    return Stage1Result{std::move(best_codebook), head_from_params(params, n_classes, seg.m_prime), std::move(log)};
}

VqScores vq_scores(const Tensor2D& embeddings, const Codebook& codebook, const LinearHead& head,
                   const SegmentationConfig& seg) {
    VqScores out{Tensor2D(embeddings.rows, head.n_classes()), assign_rows(embeddings, seg, codebook)};
    const std::size_t d = codebook.dim();
    parallel_for(embeddings.rows, [&](std::size_t begin, std::size_t end) {
        std::vector<float> q(seg.m_prime);
        for (std::size_t i = begin; i < end; ++i) {
            const auto cell = out.cells.row(i);
            for (std::size_t s = 0; s < seg.w; ++s) {
                const auto c = codebook.codewords.row(cell[s]);
                std::copy(c.begin(), c.end(), q.begin() + static_cast<std::ptrdiff_t>(s * d));
            }
            const auto lp = head_forward(q, head);
            for (std::size_t c = 0; c < lp.size(); ++c) out.probs(i, c) = static_cast<float>(std::exp(lp[c]));
        }
    });
    return out;
}

}  // namespace vqcal
