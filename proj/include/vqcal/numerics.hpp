#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vqcal/tensor.hpp"

namespace vqcal {

/// Probabilities are clamped to this floor before any log.
inline constexpr double kProbFloor = 1e-12;

double log_sum_exp(std::span<const double> v);

/// Numerically stable log-softmax (max subtraction, 64-bit accumulation).
std::vector<double> log_softmax(std::span<const double> v);
void log_softmax_inplace(std::span<double> v);

/// Mean over rows of -log_probs[i, labels[i]].
double cross_entropy(const Tensor2D& log_probs, std::span<const int> labels);

double softplus(double x);
/// d/dx softplus(x) = sigmoid(x).
double softplus_grad(double x);
double sigmoid(double x);
/// Inverse of softplus for y > 0: log(exp(y) - 1).
double softplus_inverse(double y);

/// log of the multivariate Beta function, sum(lgamma(a_i)) - lgamma(sum a_i).
double log_beta(std::span<const double> alpha);

/// Adam with decoupled weight decay.
struct AdamState {
    std::size_t step = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;

    AdamState() = default;
    AdamState(std::size_t n_params, double lr_, double weight_decay_)
        : first_moment(n_params, 0.0), second_moment(n_params, 0.0), lr(lr_), weight_decay(weight_decay_) {}
};

/// One update. Weight decay shrinks params by lr*wd*param before the Adam
/// delta; entries where `decay_mask` is 0 are exempt (empty mask = decay all).
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               std::span<const std::uint8_t> decay_mask = {});

using ScalarFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool passed(double tol = 1e-4) const { return max_rel_error < tol; }
};

/// Central differences with h = 1e-4 * max(1, |x_i|); relative error
/// |g_a - g_n| / max(1e-8, |g_a| + |g_n|), maximised over coordinates.
GradientCheck check_gradient(const ScalarFn& f, const GradFn& analytic_grad, std::span<const double> point);

}  // namespace vqcal
