#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "vqcal/dataio.hpp"
#include "vqcal/quantizer.hpp"
#include "vqcal/rng.hpp"
#include "vqcal/tensor.hpp"
#include "vqcal/training.hpp"
#include "vqcal/vqhead.hpp"

namespace vqcal {

enum class CellPrior { None, Empirical };

/// Receiver (A) and sender (B) calibration codebooks indexed like the
/// embedding codebook, slot scales sigma^2 and a global class bias.
///
/// The calibration map of the cell selected by index sequence s is
///   M = softplus(A_s^T diag(sigma^2) B_s + offset) - 1 + I
/// with A_s = [a_{s(1)}, ..., a_{s(w)}]^T, and the calibrated posterior is
///   log p(y | p_hat, s) = log_softmax(beta + prior_s + M log p_hat).
/// offset = softplus^{-1}(1), so M == I whenever the bilinear term vanishes.
struct CalibratorParams {
    Tensor2D A;                 // |C| x |Y|
    Tensor2D B;                 // |C| x |Y|
    std::vector<float> sigma2;  // w, strictly positive
    std::vector<float> beta;    // |Y|
    double offset = 0.0;
    bool learn_sigma = false;
    bool strict_identity = false;
    CellPrior cell_prior_mode = CellPrior::None;
    /// Log prior per observed cell (Laplace-smoothed class frequencies). Unseen
    /// cells get no prior term.
    std::map<IndexSequence, std::vector<float>> cell_prior;

    std::size_t codebook_size() const { return A.rows; }
    std::size_t n_classes() const { return A.cols; }
    std::size_t slots() const { return sigma2.size(); }

    /// |A| + |B| + |sigma^2| = 2*|C|*|Y| + w. beta is not counted.
    std::size_t trainable_parameter_count() const;
};

/// softplus^{-1}(1) = log(e - 1).
double identity_offset();

/// A, B ~ U[-0.01, 0.01] (B = 0 with strict_identity), sigma^2 = 1, beta = 0.
CalibratorParams init_calibrator(std::size_t codebook_size, std::size_t n_classes, std::size_t w, Rng& rng,
                                 bool strict_identity = false);

/// Rows of A and B gathered by the index sequence (w x |Y| each).
std::pair<Tensor2D, Tensor2D> select_factors(const IndexSequence& s, const CalibratorParams& params);

/// The |Y| x |Y| map M for a cell; entry (j, i) weights log p_hat_i in the
/// logit of class j.
Tensor2D cell_alpha_minus_one(const IndexSequence& s, const CalibratorParams& params);

/// Double-precision variant writing into `out` (|Y|*|Y|, row-major).
void cell_weight_matrix(std::span<const CodeIndex> s, const CalibratorParams& params, std::span<double> out);

/// log_softmax(bias + W log_p) for an explicit bias vector and weight matrix
/// W (|Y| x |Y| row-major). This is the log-linear posterior family shared by
/// the calibrator and the Dirichlet baseline.
std::vector<double> log_linear_posterior(std::span<const double> bias, std::span<const double> weights,
                                         std::span<const double> log_p);

/// Clamps each probability at 1e-12 before taking the log.
std::vector<double> clamped_log(std::span<const float> probs);

std::vector<double> calibrated_log_posterior(std::span<const double> log_p_hat, const IndexSequence& s,
                                             const CalibratorParams& params);

/// Flat training layout: A (|C|*|Y|), B (|C|*|Y|), beta (|Y|), log sigma^2 (w).
std::vector<double> calibrator_to_params(const CalibratorParams& params);
void calibrator_from_params(std::span<const double> flat, CalibratorParams& params);
/// 1 for entries subject to weight decay (A, B, beta), 0 for log sigma^2.
std::vector<std::uint8_t> calibrator_decay_mask(const CalibratorParams& params);

/// Inputs of the calibration objective: VQ log-scores, cells, labels and an
/// optional per-row additive prior (n x |Y|, empty when unused).
struct CalibrationBatchData {
    std::vector<double> log_probs;  // n x |Y|
    const Assignments* cells = nullptr;
    std::span<const int> labels;
    std::vector<double> prior;  // n x |Y| or empty
    std::size_t n_classes = 0;
};

/// Mean cross-entropy over `rows` under flat parameters. Accumulates the
/// gradient into `grad` when non-empty; the log sigma^2 block is filled only
/// when `learn_sigma` is set.
double calibrator_loss_and_grad(std::span<const double> flat, const CalibratorParams& shape,
                                const CalibrationBatchData& data, std::span<const std::size_t> rows,
                                std::span<double> grad);

/// Laplace-smoothed (+1) log class frequencies for every cell seen in training.
std::map<IndexSequence, std::vector<float>> empirical_cell_prior(const Assignments& cells,
                                                                 std::span<const int> labels,
                                                                 std::size_t n_classes);

struct Stage2Result {
    CalibratorParams params;
    TrainingLog log;
};

/// Region-aware calibration on top of a frozen codebook and head: minibatch
/// Adam on the NLL of the calibrated posterior over train_cal, early stopping
/// on val_cal.
Stage2Result train_stage2(const CalibrationDataset& ds, const Codebook& codebook, const LinearHead& head,
                          const SegmentationConfig& seg, CalibratorParams params, const TrainConfig& cfg);

/// Calibrated probabilities for precomputed VQ scores.
Tensor2D calibrate_scores(const VqScores& scores, const CalibratorParams& params);

/// End-to-end: quantize, score with the head, calibrate.
Tensor2D predict(const Tensor2D& embeddings, const Codebook& codebook, const LinearHead& head,
                 const SegmentationConfig& seg, const CalibratorParams& params);

}  // namespace vqcal
