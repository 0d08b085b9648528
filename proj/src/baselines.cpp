#include "vqcal/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "vqcal/calibrator.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/parallel.hpp"

namespace vqcal {

Tensor2D nc(const Tensor2D& probs) { return probs; }

namespace {

std::vector<double> log_matrix(const Tensor2D& probs) {
    std::vector<double> out(probs.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max<double>(probs.data[i], kProbFloor));
    return out;
}

void check_labels(const Tensor2D& probs, std::span<const int> labels) {
    if (probs.rows != labels.size()) throw ConfigError("probability rows and labels differ in length");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols) {
            throw ConfigError("label " + std::to_string(y) + " out of range for " + std::to_string(probs.cols) +
                              " classes");
        }
    }
}

double scaled_nll(std::span<const double> logp, std::size_t k, std::span<const int> labels, double inv_t) {
    std::vector<double> z(k);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) z[j] = logp[i * k + j] * inv_t;
        total += log_sum_exp(z) - z[static_cast<std::size_t>(labels[i])];
    }
    return total / static_cast<double>(labels.size());
}

}  // namespace

double temperature_nll(const Tensor2D& probs, std::span<const int> labels, double T) {
    check_labels(probs, labels);
    return scaled_nll(log_matrix(probs), probs.cols, labels, 1.0 / T);
}

TemperatureParam fit_temperature(const Tensor2D& probs, std::span<const int> labels) {
    check_labels(probs, labels);
    if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
        throw ConfigError("temperature scaling needs at least two distinct labels");
    }
    const auto logp = log_matrix(probs);
    const std::size_t k = probs.cols;
    auto f = [&](double log_t) { return scaled_nll(logp, k, labels, std::exp(-log_t)); };

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(0.05), b = std::log(20.0);
    double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > 1e-4) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    return TemperatureParam{std::exp(0.5 * (a + b))};
}

Tensor2D apply_temperature(const Tensor2D& probs, const TemperatureParam& t) {
    if (!(t.T > 0.0) || !std::isfinite(t.T)) throw ConfigError("temperature must be positive");
    Tensor2D out(probs.rows, probs.cols);
    std::vector<double> z(probs.cols);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        for (std::size_t j = 0; j < probs.cols; ++j) z[j] = std::log(std::max<double>(probs(i, j), kProbFloor)) / t.T;
        log_softmax_inplace(z);
        for (std::size_t j = 0; j < probs.cols; ++j) out(i, j) = static_cast<float>(std::exp(z[j]));
    }
    return out;
}

DirichletParams DirichletParams::identity(std::size_t n_classes, double l2) {
    DirichletParams p;
    p.W = Tensor2D(n_classes, n_classes);
    for (std::size_t j = 0; j < n_classes; ++j) p.W(j, j) = 1.0f;
    p.c.assign(n_classes, 0.0f);
    p.l2 = l2;
    return p;
}

std::vector<double> dirichlet_to_params(const DirichletParams& p) {
    std::vector<double> flat(p.W.data.begin(), p.W.data.end());
    flat.insert(flat.end(), p.c.begin(), p.c.end());
    return flat;
}

void dirichlet_from_params(std::span<const double> flat, DirichletParams& p) {
    const std::size_t k = p.n_classes();
    if (flat.size() != k * k + k) throw ConfigError("dirichlet_from_params: parameter count mismatch");
    for (std::size_t i = 0; i < k * k; ++i) p.W.data[i] = static_cast<float>(flat[i]);
    for (std::size_t j = 0; j < k; ++j) p.c[j] = static_cast<float>(flat[k * k + j]);
}

double dirichlet_loss_and_grad(std::span<const double> flat, std::size_t k, double l2,
                               std::span<const double> log_probs, std::span<const int> labels,
                               std::span<const std::size_t> rows, std::span<double> grad) {
    if (flat.size() != k * k + k) throw ConfigError("dirichlet_loss_and_grad: parameter count mismatch");
    const double* W = flat.data();
    const double* c = flat.data() + k * k;
    std::vector<double> z(k);
    double loss = 0.0;
    const double inv_n = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
    for (std::size_t r : rows) {
        const double* lp = log_probs.data() + r * k;
        for (std::size_t j = 0; j < k; ++j) {
            double s = c[j];
            for (std::size_t i = 0; i < k; ++i) s += W[j * k + i] * lp[i];
            z[j] = s;
        }
        log_softmax_inplace(z);
        const auto y = static_cast<std::size_t>(labels[r]);
        loss -= z[y];
        if (grad.empty()) continue;
        for (std::size_t j = 0; j < k; ++j) {
            const double g = (std::exp(z[j]) - (j == y ? 1.0 : 0.0)) * inv_n;
            for (std::size_t i = 0; i < k; ++i) grad[j * k + i] += g * lp[i];
            grad[k * k + j] += g;
        }
    }
    loss *= inv_n;

    double reg = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < k; ++i) {
            const double dev = W[j * k + i] - (i == j ? 1.0 : 0.0);
            reg += dev * dev;
            if (!grad.empty()) grad[j * k + i] += 2.0 * l2 * dev;
        }
        reg += c[j] * c[j];
        if (!grad.empty()) grad[k * k + j] += 2.0 * l2 * c[j];
    }
    return loss + l2 * reg;
}

DirichletFit fit_dirichlet(const Tensor2D& train_probs, std::span<const int> train_labels,
                           const Tensor2D& val_probs, std::span<const int> val_labels, double l2,
                           const TrainConfig& cfg) {
    cfg.validate();
    if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("dirichlet l2 must be finite and non-negative");
    if (train_probs.rows == 0 || val_probs.rows == 0) throw ConfigError("fit_dirichlet: empty train or validation split");
    if (train_probs.cols != val_probs.cols) throw ConfigError("fit_dirichlet: class count mismatch");
    check_labels(train_probs, train_labels);
    check_labels(val_probs, val_labels);
    const std::size_t k = train_probs.cols;
    const auto train_lp = log_matrix(train_probs);
    const auto val_lp = log_matrix(val_probs);
    std::vector<std::size_t> val_rows(val_probs.rows);
    for (std::size_t i = 0; i < val_rows.size(); ++i) val_rows[i] = i;

    DirichletParams params = DirichletParams::identity(k, l2);
    std::vector<double> flat = dirichlet_to_params(params);
    // The explicit penalty already pulls towards the identity, so the
    // optimizer's own decay (which pulls towards zero) is switched off.
    const std::vector<std::uint8_t> no_decay(flat.size(), 0);

    MinibatchProblem problem;
    problem.n_train = train_probs.rows;
    problem.loss_grad = [&](std::span<const std::size_t> batch, std::span<const double> p, std::span<double> g) {
        return dirichlet_loss_and_grad(p, k, l2, train_lp, train_labels, batch, g);
    };
    problem.val_loss = [&](std::span<const double> p) {
        return dirichlet_loss_and_grad(p, k, 0.0, val_lp, val_labels, val_rows, {});
    };
    TrainingLog log = train_minibatch(flat, no_decay, problem, cfg);
    dirichlet_from_params(flat, params);
    return DirichletFit{std::move(params), std::move(log)};
}

Tensor2D apply_dirichlet(const Tensor2D& probs, const DirichletParams& p) {
    const std::size_t k = p.n_classes();
    if (probs.cols != k) throw ConfigError("apply_dirichlet: class count mismatch");
    const std::vector<double> W(p.W.data.begin(), p.W.data.end());
    const std::vector<double> c(p.c.begin(), p.c.end());
    Tensor2D out(probs.rows, k);
    parallel_for(probs.rows, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto lp = log_linear_posterior(c, W, clamped_log(probs.row(i)));
            for (std::size_t j = 0; j < k; ++j) out(i, j) = static_cast<float>(std::exp(lp[j]));
        }
    });
    return out;
}

}  // namespace vqcal
