#pragma once

#include <span>
#include <vector>

#include "vqcal/tensor.hpp"
#include "vqcal/training.hpp"

namespace vqcal {

/// No calibration: returns the scores unchanged.
Tensor2D nc(const Tensor2D& probs);

struct TemperatureParam {
    double T = 1.0;
};

/// Golden-section search on log T over [ln 0.05, ln 20] minimising the NLL of
/// softmax(log p / T). Throws ConfigError when fewer than two classes occur.
TemperatureParam fit_temperature(const Tensor2D& probs, std::span<const int> labels);
Tensor2D apply_temperature(const Tensor2D& probs, const TemperatureParam& t);
double temperature_nll(const Tensor2D& probs, std::span<const int> labels, double T);

/// log_softmax(W log p + c), regularised towards the identity map.
struct DirichletParams {
    Tensor2D W;  // |Y| x |Y|
    std::vector<float> c;
    double l2 = 1e-3;

    static DirichletParams identity(std::size_t n_classes, double l2);
    std::size_t n_classes() const { return c.size(); }
};

/// Flat layout: W row-major, then c.
std::vector<double> dirichlet_to_params(const DirichletParams& p);
void dirichlet_from_params(std::span<const double> flat, DirichletParams& p);

/// Mean cross-entropy over `rows` plus l2*(||W - I||^2 + ||c||^2). `log_probs`
/// is n x |Y| row-major (already clamped). Adds the gradient when `grad` is
/// non-empty.
double dirichlet_loss_and_grad(std::span<const double> flat, std::size_t n_classes, double l2,
                               std::span<const double> log_probs, std::span<const int> labels,
                               std::span<const std::size_t> rows, std::span<double> grad);

struct DirichletFit {
    DirichletParams params;
    TrainingLog log;
};

/// Adam from the identity map with early stopping on the validation NLL.
DirichletFit fit_dirichlet(const Tensor2D& train_probs, std::span<const int> train_labels,
                           const Tensor2D& val_probs, std::span<const int> val_labels, double l2,
                           const TrainConfig& cfg);
Tensor2D apply_dirichlet(const Tensor2D& probs, const DirichletParams& p);

}  // namespace vqcal
