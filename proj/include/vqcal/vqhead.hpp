#pragma once

#include <span>
#include <vector>

#include "vqcal/dataio.hpp"
#include "vqcal/quantizer.hpp"
#include "vqcal/tensor.hpp"
#include "vqcal/training.hpp"

namespace vqcal {

/// Linear classifier over the flattened quantized representation.
struct LinearHead {
    Tensor2D weight;          // |Y| x m'
    std::vector<float> bias;  // |Y|

    static LinearHead zeros(std::size_t n_classes, std::size_t m_prime);
    std::size_t n_classes() const { return weight.rows; }
    std::size_t input_dim() const { return weight.cols; }
};

/// log_softmax(W q + b).
std::vector<double> head_forward(std::span<const float> q, const LinearHead& head);

/// Flat parameter layout used while training: W row-major, then b.
std::vector<double> head_to_params(const LinearHead& head);
LinearHead head_from_params(std::span<const double> params, std::size_t n_classes, std::size_t m_prime);

/// Mean cross-entropy of rows `rows` of `q` under flat head parameters; adds
/// the gradient into `grad` when it is non-empty.
double head_loss_and_grad(std::span<const double> params, std::size_t n_classes, const Tensor2D& q,
                          std::span<const int> labels, std::span<const std::size_t> rows, std::span<double> grad);

struct Stage1Result {
    Codebook codebook;
    LinearHead head;
    TrainingLog log;
};

/// Quantization-aware head training. Per minibatch: segment, assign, select,
/// forward, cross-entropy, Adam step on the head, then EMA update of the
/// codebook with the same batch. Returns the codebook and head at the best
/// validation NLL.
Stage1Result train_stage1(const CalibrationDataset& ds, Codebook codebook, LinearHead head,
                          const SegmentationConfig& seg, const TrainConfig& cfg);

struct VqScores {
    Tensor2D probs;  // n x |Y|
    Assignments cells;
};

VqScores vq_scores(const Tensor2D& embeddings, const Codebook& codebook, const LinearHead& head,
                   const SegmentationConfig& seg);

}  // namespace vqcal
