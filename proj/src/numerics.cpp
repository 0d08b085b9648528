#include "vqcal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "vqcal/errors.hpp"

namespace vqcal {

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

void log_softmax_inplace(std::span<double> v) {
    const double lse = log_sum_exp(v);
    for (double& x : v) x -= lse;
}

std::vector<double> log_softmax(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    log_softmax_inplace(out);
    return out;
}

double cross_entropy(const Tensor2D& log_probs, std::span<const int> labels) {
    if (labels.size() != log_probs.rows) {
        throw ConfigError("cross_entropy: label count does not match row count");
    }
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= log_probs.cols) {
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " out of range at row " +
                              std::to_string(i));
        }
        total -= log_probs(i, static_cast<std::size_t>(y));
    }
    return total / static_cast<double>(labels.size());
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_grad(double x) { return sigmoid(x); }

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be positive");
    if (y > 30.0) return y + std::log1p(-std::exp(-y));
    return std::log(std::expm1(y));
}

double log_beta(std::span<const double> alpha) {
    double sum = 0.0;
    double lg = 0.0;
    for (double a : alpha) {
        lg += std::lgamma(a);
        sum += a;
    }
    return lg - std::lgamma(sum);
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               std::span<const std::uint8_t> decay_mask) {
    if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw ConfigError("adam_step: shape mismatch between params, grads and moments");
    }
    if (!decay_mask.empty() && decay_mask.size() != params.size()) {
        throw ConfigError("adam_step: decay mask length mismatch");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        if (state.weight_decay > 0.0 && (decay_mask.empty() || decay_mask[i] != 0)) {
            params[i] -= state.lr * state.weight_decay * params[i];
        }
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

GradientCheck check_gradient(const ScalarFn& f, const GradFn& analytic_grad, std::span<const double> point) {
    const std::vector<double> g_a = analytic_grad(point);
    if (g_a.size() != point.size()) throw ConfigError("check_gradient: gradient size mismatch");
    std::vector<double> x(point.begin(), point.end());
    GradientCheck result;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double h = 1e-4 * std::max(1.0, std::abs(xi));
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericalError("check_gradient: non-finite objective at probe of coordinate " +
                                 std::to_string(i));
        }
        const double g_n = (fp - fm) / (2.0 * h);
        const double rel = std::abs(g_a[i] - g_n) / std::max(1e-8, std::abs(g_a[i]) + std::abs(g_n));
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_index = i;
        }
    }
    return result;
}

}  // namespace vqcal
