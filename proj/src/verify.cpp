#include "vqcal/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>

#include "vqcal/baselines.hpp"
#include "vqcal/calibrator.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/oracles.hpp"
#include "vqcal/quantizer.hpp"
#include "vqcal/rng.hpp"
#include "vqcal/vqhead.hpp"

namespace vqcal {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> random_simplex(Rng& rng, std::size_t k) {
    std::vector<double> p(k);
    double total = 0.0;
    for (double& v : p) {
        v = -std::log(1.0 - rng.uniform());
        total += v;
    }
    for (double& v : p) v /= total;
    return p;
}

/// Gradient check on the coordinates [lo, hi) of `point`, others held fixed.
GradientCheck check_block(const std::function<double(std::span<const double>, std::span<double>)>& loss_grad,
                          const std::vector<double>& point, std::size_t lo, std::size_t hi) {
    auto embed = [&](std::span<const double> block) {
        std::vector<double> full = point;
        std::copy(block.begin(), block.end(), full.begin() + static_cast<std::ptrdiff_t>(lo));
        return full;
    };
    ScalarFn f = [&](std::span<const double> block) { return loss_grad(embed(block), {}); };
    GradFn g = [&](std::span<const double> block) {
        const auto full = embed(block);
        std::vector<double> grad(full.size(), 0.0);
        loss_grad(full, grad);
        return std::vector<double>(grad.begin() + static_cast<std::ptrdiff_t>(lo),
                                   grad.begin() + static_cast<std::ptrdiff_t>(hi));
    };
    return check_gradient(f, g, std::span<const double>(point).subspan(lo, hi - lo));
}

CheckResult gradient_result(std::string name, double worst, double tol, std::size_t points, double secs) {
    CheckResult r;
    r.name = std::move(name);
    r.value = worst;
    r.tolerance = tol;
    r.passed = worst < tol;
    r.detail = "max relative error over " + std::to_string(points) + " random points";
    r.seconds = secs;
    return r;
}

}  // namespace

CheckResult verify_nearest_enumeration(std::uint64_t seed, std::size_t instances) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    std::size_t mismatches = 0;
    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t w = 1 + rng.below(3), c = 2 + rng.below(4), d = 1 + rng.below(3);
        const auto seg = SegmentationConfig::for_embedding(w * d, w);
        Tensor2D words(c, d);
        for (float& v : words.data) v = static_cast<float>(rng.normal());
        const Codebook cb = Codebook::from_codewords(std::move(words), 0.99);
        std::vector<float> z(w * d);
        for (float& v : z) v = static_cast<float>(rng.normal());
        if (quantize(z, cb, seg).cell != nearest_by_enumeration(z, cb, seg)) ++mismatches;
    }
    CheckResult r;
    r.name = "slotwise_assignment_vs_enumeration";
    r.value = static_cast<double>(mismatches);
    r.passed = mismatches == 0;
    r.detail = std::to_string(mismatches) + " mismatches in " + std::to_string(instances) + " instances";
    r.seconds = seconds_since(t0);
    return r;
}

CheckResult verify_dirichlet_bayes(std::uint64_t seed, std::size_t points, double tol) {
    const auto t0 = Clock::now();
    Rng rng(seed);
    constexpr std::size_t k = 3;
    double worst = 0.0;
    for (std::size_t n = 0; n < points; ++n) {
        std::vector<double> alphas(k * k), prior = random_simplex(rng, k), p = random_simplex(rng, k);
        for (double& a : alphas) a = rng.uniform(0.5, 4.0);
        std::vector<double> bias(k), weights(k * k), log_p(k);
        for (std::size_t j = 0; j < k; ++j) {
            const std::span<const double> row(alphas.data() + j * k, k);
            bias[j] = std::log(prior[j]) - log_beta(row);
            for (std::size_t i = 0; i < k; ++i) weights[j * k + i] = row[i] - 1.0;
            log_p[j] = std::log(p[j]);
        }
        const auto lp = log_linear_posterior(bias, weights, log_p);
        const auto oracle = dirichlet_bayes_posterior(prior, alphas, p);
        for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(std::exp(lp[j]) - oracle[j]));
    }
    CheckResult r;
    r.name = "log_linear_posterior_vs_dirichlet_bayes";
    r.value = worst;
    r.tolerance = tol;
    r.passed = worst <= tol;
    r.detail = "max abs probability difference over " + std::to_string(points) + " simplex points";
    r.seconds = seconds_since(t0);
    return r;
}

std::vector<CheckResult> verify_gradients(std::uint64_t seed, std::size_t points, double tol) {
    Rng rng(seed);
    std::vector<CheckResult> out;

    {
        const auto t0 = Clock::now();
        constexpr std::size_t k = 3, m = 6, n = 8;
        double worst = 0.0;
        for (std::size_t p = 0; p < points; ++p) {
            Tensor2D q(n, m);
            for (float& v : q.data) v = static_cast<float>(rng.normal());
            std::vector<int> labels(n);
            for (int& y : labels) y = static_cast<int>(rng.below(k));
            std::vector<std::size_t> rows(n);
            for (std::size_t i = 0; i < n; ++i) rows[i] = i;
            std::vector<double> point(k * m + k);
            for (double& v : point) v = rng.uniform(-1.0, 1.0);
            auto lg = [&](std::span<const double> x, std::span<double> g) {
                return head_loss_and_grad(x, k, q, labels, rows, g);
            };
            worst = std::max(worst, check_block(lg, point, 0, point.size()).max_rel_error);
        }
        out.push_back(gradient_result("gradient_vq_head", worst, tol, points, seconds_since(t0)));
    }

    {
        const auto t0 = Clock::now();
        constexpr std::size_t k = 3, w = 2, c = 4, n = 10;
        double worst[4] = {0.0, 0.0, 0.0, 0.0};
        for (std::size_t p = 0; p < points; ++p) {
            Rng init_rng(rng.next_u64());
            CalibratorParams shape = init_calibrator(c, k, w, init_rng);
            shape.learn_sigma = true;
            Assignments cells{w, std::vector<CodeIndex>(n * w)};
            for (auto& s : cells.idx) s = static_cast<CodeIndex>(rng.below(c));
            std::vector<int> labels(n);
            for (int& y : labels) y = static_cast<int>(rng.below(k));
            CalibrationBatchData data;
            data.n_classes = k;
            data.cells = &cells;
            data.labels = labels;
            for (std::size_t i = 0; i < n; ++i) {
                for (double v : random_simplex(rng, k)) data.log_probs.push_back(std::log(v));
            }
            std::vector<std::size_t> rows(n);
            for (std::size_t i = 0; i < n; ++i) rows[i] = i;
            std::vector<double> point(2 * c * k + k + w);
            for (std::size_t i = 0; i < 2 * c * k + k; ++i) point[i] = rng.uniform(-1.0, 1.0);
            for (std::size_t t = 0; t < w; ++t) point[2 * c * k + k + t] = rng.uniform(-0.5, 0.5);
            auto lg = [&](std::span<const double> x, std::span<double> g) {
                return calibrator_loss_and_grad(x, shape, data, rows, g);
            };
            const std::size_t edges[5] = {0, c * k, 2 * c * k, 2 * c * k + k, 2 * c * k + k + w};
            for (int b = 0; b < 4; ++b) {
                worst[b] = std::max(worst[b], check_block(lg, point, edges[b], edges[b + 1]).max_rel_error);
            }
        }
        const double secs = seconds_since(t0) / 4.0;
        const char* names[4] = {"gradient_calibrator_A", "gradient_calibrator_B", "gradient_calibrator_beta",
                                "gradient_calibrator_sigma2"};
        for (int b = 0; b < 4; ++b) out.push_back(gradient_result(names[b], worst[b], tol, points, secs));
    }

    {
        const auto t0 = Clock::now();
        constexpr std::size_t k = 3, n = 10;
        double worst = 0.0;
        for (std::size_t p = 0; p < points; ++p) {
            std::vector<double> log_probs;
            for (std::size_t i = 0; i < n; ++i) {
                for (double v : random_simplex(rng, k)) log_probs.push_back(std::log(v));
            }
            std::vector<int> labels(n);
            for (int& y : labels) y = static_cast<int>(rng.below(k));
            std::vector<std::size_t> rows(n);
            for (std::size_t i = 0; i < n; ++i) rows[i] = i;
            std::vector<double> point(k * k + k);
            for (double& v : point) v = rng.uniform(-1.0, 1.0);
            auto lg = [&](std::span<const double> x, std::span<double> g) {
                return dirichlet_loss_and_grad(x, k, 1e-2, log_probs, labels, rows, g);
            };
            worst = std::max(worst, check_block(lg, point, 0, point.size()).max_rel_error);
        }
        out.push_back(gradient_result("gradient_dirichlet", worst, tol, points, seconds_since(t0)));
    }
    return out;
}

bool VerifyReport::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

VerifyReport run_verify(std::uint64_t seed) {
    VerifyReport r;
    r.checks.push_back(verify_nearest_enumeration(seed));
    r.checks.push_back(verify_dirichlet_bayes(seed + 1));
    for (auto& c : verify_gradients(seed + 2)) r.checks.push_back(std::move(c));
    return r;
}

nlohmann::json to_json(const VerifyReport& r) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks) {
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"value", c.value},
                          {"tolerance", c.tolerance},
                          {"detail", c.detail},
                          {"seconds", c.seconds}});
    }
    return {{"all_passed", r.all_passed()}, {"checks", checks}};
}

}  // namespace vqcal
