#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vqcal/artifacts.hpp"
#include "vqcal/baselines.hpp"
#include "vqcal/calibrator.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"

using namespace vqcal;

namespace {

// Scores with varied sharpness: softmax of scaled gaussian logits.
Tensor2D varied_probs(Rng& rng, std::size_t n, std::size_t k) {
    Tensor2D p(n, k);
    std::vector<double> z(k);
    for (std::size_t i = 0; i < n; ++i) {
        const double scale = rng.uniform(0.2, 3.0);
        for (double& v : z) v = scale * rng.normal();
        log_softmax_inplace(z);
        for (std::size_t j = 0; j < k; ++j) p(i, j) = static_cast<float>(std::exp(z[j]));
    }
    return p;
}

std::vector<int> sample_labels(Rng& rng, const Tensor2D& p) {
    std::vector<int> y(p.rows);
    std::vector<double> row(p.cols);
    for (std::size_t i = 0; i < p.rows; ++i) {
        for (std::size_t j = 0; j < p.cols; ++j) row[j] = p(i, j);
        y[i] = static_cast<int>(rng.categorical(row));
    }
    return y;
}

Tensor2D sharpen(const Tensor2D& q, double power) {
    Tensor2D p(q.rows, q.cols);
    std::vector<double> z(q.cols);
    for (std::size_t i = 0; i < q.rows; ++i) {
        for (std::size_t j = 0; j < q.cols; ++j) z[j] = power * std::log(static_cast<double>(q(i, j)));
        log_softmax_inplace(z);
        for (std::size_t j = 0; j < q.cols; ++j) p(i, j) = static_cast<float>(std::exp(z[j]));
    }
    return p;
}

std::size_t argmax(std::span<const float> r) { return std::max_element(r.begin(), r.end()) - r.begin(); }

TrainConfig fast_config() {
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.batch_size = 256;
    cfg.max_epochs = 100;
    return cfg;
}

}  // namespace

TEST_CASE("nc is the identity") {
    Rng rng(1);
    const Tensor2D p = testutil::random_probs(rng, 20, 4);
    CHECK(nc(p) == p);
    CHECK(nc(nc(p)) == nc(p));
}

TEST_CASE("temperature stays near 1 on calibrated scores") {
    Rng rng(2);
    const Tensor2D p = varied_probs(rng, 20000, 4);
    const auto y = sample_labels(rng, p);
    CHECK(std::abs(fit_temperature(p, y).T - 1.0) < 0.05);
}

TEST_CASE("temperature recovers a planted sharpening") {
    Rng rng(3);
    const Tensor2D q = varied_probs(rng, 20000, 4);
    const auto y = sample_labels(rng, q);
    const Tensor2D p = sharpen(q, 2.0);
    const TemperatureParam t = fit_temperature(p, y);
    CHECK(std::abs(t.T - 2.0) < 0.1);
    CHECK(temperature_nll(p, y, t.T) <= temperature_nll(p, y, 1.0));
    CHECK(temperature_nll(p, y, t.T) <= temperature_nll(p, y, 1.05 * t.T) + 1e-12);
    CHECK(temperature_nll(p, y, t.T) <= temperature_nll(p, y, t.T / 1.05) + 1e-12);
}

TEST_CASE("temperature scaling keeps the argmax and T = 1 is the identity") {
    Rng rng(4);
    const Tensor2D p = varied_probs(rng, 500, 5);
    CHECK(testutil::max_abs_diff(apply_temperature(p, {1.0}), p) < 1e-6);
    for (double T : {0.1, 0.5, 3.0, 17.0}) {
        const Tensor2D s = apply_temperature(p, {T});
        for (std::size_t i = 0; i < p.rows; ++i) CHECK(argmax(s.row(i)) == argmax(p.row(i)));
    }
}

TEST_CASE("temperature fit rejects a single class") {
    Rng rng(5);
    const Tensor2D p = testutil::random_probs(rng, 10, 3);
    CHECK_THROWS_AS(fit_temperature(p, std::vector<int>(10, 1)), ConfigError);
    CHECK_THROWS_AS(fit_temperature(p, std::vector<int>(9, 1)), ConfigError);
}

TEST_CASE("dirichlet identity map returns its input") {
    Rng rng(6);
    const Tensor2D p = testutil::random_probs(rng, 100, 4);
    CHECK(testutil::max_abs_diff(apply_dirichlet(p, DirichletParams::identity(4, 1e-3)), p) < 1e-6);
}

TEST_CASE("dirichlet gradient matches finite differences") {
    Rng rng(7);
    const std::size_t n = 12, k = 3;
    std::vector<double> lp;
    for (std::size_t i = 0; i < n; ++i)
        for (double v : testutil::simplex_point(rng, k)) lp.push_back(std::log(v));
    const auto y = testutil::random_labels(rng, n, k);
    const std::vector<std::size_t> rows{0, 2, 5, 7, 8, 11};
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> point(k * k + k);
        for (double& v : point) v = rng.uniform(-1.5, 1.5);
        ScalarFn f = [&](std::span<const double> p) { return dirichlet_loss_and_grad(p, k, 0.3, lp, y, rows, {}); };
        GradFn g = [&](std::span<const double> p) {
            std::vector<double> grad(p.size(), 0.0);
            dirichlet_loss_and_grad(p, k, 0.3, lp, y, rows, grad);
            return grad;
        };
        CHECK(check_gradient(f, g, point).max_rel_error < 1e-4);
    }
}

TEST_CASE("dirichlet with a huge penalty stays at the identity") {
    Rng rng(8);
    const Tensor2D q = varied_probs(rng, 2000, 3);
    const auto y = sample_labels(rng, q);
    const Tensor2D p = sharpen(q, 3.0);
    // default lr: Adam's step size does not shrink with the penalty's curvature
    TrainConfig cfg;
    cfg.batch_size = 256;
    cfg.max_epochs = 50;
    const auto fit = fit_dirichlet(p, y, p, y, 1e6, cfg);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(fit.params.c[j]) < 1e-3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(fit.params.W(j, i) - (i == j ? 1.0f : 0.0f)) < 1e-3);
    }
}

TEST_CASE("dirichlet recovers a planted log-linear distortion") {
    Rng rng(9);
    const std::size_t k = 3;
    DirichletParams truth = DirichletParams::identity(k, 0.0);
    const float w[9] = {0.6f, 0.2f, 0.0f, -0.1f, 0.5f, 0.1f, 0.0f, 0.3f, 0.8f};
    std::copy(std::begin(w), std::end(w), truth.W.data.begin());
    truth.c = {0.3f, -0.2f, 0.0f};

    auto draw = [&](std::size_t n, Tensor2D& p, std::vector<int>& y) {
        p = varied_probs(rng, n, k);
        y = sample_labels(rng, apply_dirichlet(p, truth));
    };
    Tensor2D tr, va, te;
    std::vector<int> ytr, yva, yte;
    draw(8000, tr, ytr);
    draw(1000, va, yva);
    draw(10000, te, yte);
    const auto fit = fit_dirichlet(tr, ytr, va, yva, 0.0, fast_config());
    auto test_nll = [&](const DirichletParams& p) {
        const Tensor2D out = apply_dirichlet(te, p);
        double s = 0;
        for (std::size_t i = 0; i < te.rows; ++i) s -= std::log(std::max<double>(out(i, yte[i]), 1e-12));
        return s / double(te.rows);
    };
    const double ours = test_nll(fit.params), planted = test_nll(truth);
    CHECK(ours - planted < 0.02);
    CHECK(ours < test_nll(DirichletParams::identity(k, 0.0)));
}

TEST_CASE("single-cell VQ calibrator and dirichlet reach similar NLL") {
    Rng rng(10);
    const std::size_t k = 2;
    DirichletParams truth = DirichletParams::identity(k, 0.0);
    truth.W = Tensor2D(2, 2, std::vector<float>{0.5f, -0.2f, 0.1f, 0.6f});
    truth.c = {0.2f, 0.0f};
    const Tensor2D p = varied_probs(rng, 6000, k);
    const auto y = sample_labels(rng, apply_dirichlet(p, truth));
    std::vector<std::size_t> tr_rows, va_rows, te_rows;
    for (std::size_t i = 0; i < 6000; ++i) (i < 3000 ? tr_rows : i < 3500 ? va_rows : te_rows).push_back(i);
    auto pick = [&](const std::vector<std::size_t>& r, std::vector<int>& yo) {
        yo.clear();
        for (std::size_t i : r) yo.push_back(y[i]);
        return p.gather_rows(r);
    };
    std::vector<int> ytr, yva, yte;
    const Tensor2D ptr = pick(tr_rows, ytr), pva = pick(va_rows, yva), pte = pick(te_rows, yte);
    const TrainConfig cfg = fast_config();
    const auto dc = fit_dirichlet(ptr, ytr, pva, yva, 0.0, cfg);

    // w = 1 and one codeword: every row shares a single cell
    CalibratorParams cal = init_calibrator(1, k, 1, rng);
    Assignments cells{1, std::vector<CodeIndex>(6000, 0)};
    CalibrationBatchData data;
    data.n_classes = k;
    data.cells = &cells;
    data.labels = y;
    for (float v : p.data) data.log_probs.push_back(std::log(std::max<double>(v, 1e-12)));
    std::vector<double> flat = calibrator_to_params(cal);
    const std::vector<std::uint8_t> no_decay(flat.size(), 0);
    MinibatchProblem problem;
    problem.n_train = tr_rows.size();
    problem.loss_grad = [&](std::span<const std::size_t> b, std::span<const double> x, std::span<double> g) {
        std::vector<std::size_t> rows(b.begin(), b.end());
        for (auto& r : rows) r = tr_rows[r];
        return calibrator_loss_and_grad(x, cal, data, rows, g);
    };
    problem.val_loss = [&](std::span<const double> x) { return calibrator_loss_and_grad(x, cal, data, va_rows, {}); };
    train_minibatch(flat, no_decay, problem, cfg);
    const double vq_nll = calibrator_loss_and_grad(flat, cal, data, te_rows, {});

    const Tensor2D out = apply_dirichlet(pte, dc.params);
    double dc_nll = 0;
    for (std::size_t i = 0; i < pte.rows; ++i) dc_nll -= std::log(out(i, yte[i]));
    dc_nll /= double(pte.rows);
    CHECK(std::abs(vq_nll - dc_nll) < 0.05);
}

TEST_CASE("baseline artifacts round trip") {
    const auto dir = testutil::scratch("baseline_artifacts");
    save_temperature(dir, {1.75});
    CHECK(load_temperature(dir).T == 1.75);
    DirichletParams d = DirichletParams::identity(3, 0.01);
    d.W(0, 2) = 0.25f;
    d.c[1] = -0.5f;
    save_dirichlet(dir, d);
    const DirichletParams e = load_dirichlet(dir);
    CHECK(e.W == d.W);
    CHECK(e.c == d.c);
    CHECK(e.l2 == d.l2);
}
