#include "vqcal/rate_experiment.hpp"

#include <algorithm>
#include <cmath>

#include "vqcal/calibrator.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/rng.hpp"

namespace vqcal {

namespace {

constexpr std::size_t kCodes = 4, kClasses = 3, kSlots = 2;

double outer_error(const CalibratorParams& fit, const CalibratorParams& truth, std::size_t code) {
    double err = 0.0;
    for (std::size_t j = 0; j < kClasses; ++j) {
        for (std::size_t i = 0; i < kClasses; ++i) {
            const double d = static_cast<double>(fit.A(code, j)) * fit.B(code, i) -
                             static_cast<double>(truth.A(code, j)) * truth.B(code, i);
            err += d * d;
        }
    }
    return std::sqrt(err);
}

double single_run(std::size_t count, const RateConfig& cfg, Rng& rng) {
    CalibratorParams truth = init_calibrator(kCodes, kClasses, kSlots, rng);
    for (float& v : truth.A.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (float& v : truth.B.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    const std::size_t n = count + cfg.background;
    Assignments cells{kSlots, std::vector<CodeIndex>(n * kSlots)};
    std::vector<int> labels(n);
    CalibrationBatchData data;
    data.n_classes = kClasses;
    data.cells = &cells;
    data.log_probs.resize(n * kClasses);
    for (std::size_t r = 0; r < n; ++r) {
        cells.idx[r * kSlots] = r < count ? 0 : static_cast<CodeIndex>(1 + rng.below(kCodes - 1));
        cells.idx[r * kSlots + 1] = static_cast<CodeIndex>(1 + rng.below(kCodes - 1));
        double total = 0.0;
        std::vector<double> p(kClasses);
        for (double& v : p) {
            v = -std::log(1.0 - rng.uniform());
            total += v;
        }
        for (std::size_t i = 0; i < kClasses; ++i) {
            data.log_probs[r * kClasses + i] = std::log(std::max(p[i] / total, kProbFloor));
        }
        const auto lp = calibrated_log_posterior(std::span<const double>(data.log_probs).subspan(r * kClasses, kClasses),
                                                 cells.cell(r), truth);
        std::vector<double> post(kClasses);
        for (std::size_t j = 0; j < kClasses; ++j) post[j] = std::exp(lp[j]);
        labels[r] = static_cast<int>(rng.categorical(post));
    }
    data.labels = labels;

    CalibratorParams shape = init_calibrator(kCodes, kClasses, kSlots, rng);
    std::vector<double> params = calibrator_to_params(shape);
    for (std::size_t i = 0; i < 2 * kCodes * kClasses; ++i) params[i] = rng.uniform(-0.1, 0.1);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    AdamState adam(params.size(), cfg.lr, 0.0);
    std::vector<double> grad(params.size());
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        // final third at a tenth of the rate to settle
        adam.lr = step < 2 * cfg.steps / 3 ? cfg.lr : cfg.lr / 10.0;
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = calibrator_loss_and_grad(params, shape, data, rows, grad);
        if (!std::isfinite(loss)) throw NumericalError("rate experiment: non-finite loss");
        adam_step(adam, params, grad);
    }
    calibrator_from_params(params, shape);
    return outer_error(shape, truth, 0);
}

}  // namespace

RateResult run_rate_experiment(const RateConfig& cfg) {
    if (cfg.counts.size() < 2 || cfg.repetitions == 0) throw ConfigError("rate experiment needs two counts and one repetition");
    Rng rng(cfg.seed);
    RateResult out;
    for (std::size_t count : cfg.counts) {
        if (count == 0) throw ConfigError("rate experiment counts must be positive");
        double total = 0.0;
        for (std::size_t r = 0; r < cfg.repetitions; ++r) total += single_run(count, cfg, rng);
        out.points.push_back({count, total / static_cast<double>(cfg.repetitions)});
    }
    double mx = 0.0, my = 0.0;
    for (const auto& p : out.points) {
        mx += std::log(static_cast<double>(p.count));
        my += std::log(p.mean_error);
    }
    mx /= static_cast<double>(out.points.size());
    my /= static_cast<double>(out.points.size());
    double sxy = 0.0, sxx = 0.0;
    for (const auto& p : out.points) {
        const double dx = std::log(static_cast<double>(p.count)) - mx;
        sxy += dx * (std::log(p.mean_error) - my);
        sxx += dx * dx;
    }
    out.slope = sxy / sxx;
    return out;
}

nlohmann::json to_json(const RateResult& r) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : r.points) pts.push_back({{"count", p.count}, {"mean_error", p.mean_error}});
    return {{"points", pts}, {"slope", r.slope}};
}

}  // namespace vqcal
