#include <doctest.h>

#include <cmath>
#include <limits>

#include "metric_oracles.hpp"
#include "test_util.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/metrics.hpp"

using namespace vqcal;

namespace {

Tensor2D rows(std::size_t k, std::vector<float> v) {
    const std::size_t n = v.size() / k;
    return Tensor2D(n, k, std::move(v));
}

Tensor2D line(std::vector<float> v) {
    const std::size_t n = v.size();
    return Tensor2D(n, 1, std::move(v));
}

const BinningConfig one_bin{1};
const KernelConfig flat_kernel{1e9};

}  // namespace

TEST_CASE("binning edges") {
    const BinningConfig b{15};
    CHECK(b.bin_of(0.0) == 0);
    CHECK(b.bin_of(1.0) == 14);
    CHECK(b.bin_of(0.999) == 14);
    CHECK(b.bin_of(1.0 / 15.0 + 1e-9) == 1);
    CHECK_THROWS_AS(BinningConfig{0}.validate(), ConfigError);
    CHECK_THROWS_AS(KernelConfig{0.0}.validate(), ConfigError);
}

TEST_CASE("ece hand example") {
    const Tensor2D p = rows(2, {0.9f, 0.1f, 0.9f, 0.1f, 0.8f, 0.2f, 0.8f, 0.2f});
    const std::vector<int> y{0, 1, 0, 0};
    CHECK(ece(p, y, one_bin) == doctest::Approx(0.10).epsilon(1e-6));
    CHECK(std::abs(ece(p, y, one_bin) - 0.10) < 1e-6);
    CHECK(std::abs(oracle::ece(p, y, 1) - 0.10) < 1e-6);
}

TEST_CASE("classwise ece hand example") {
    const Tensor2D p = rows(2, {0.9f, 0.1f, 0.8f, 0.2f, 0.7f, 0.3f, 0.3f, 0.7f, 0.2f, 0.8f, 0.4f, 0.6f});
    const std::vector<int> y{0, 0, 1, 1, 0, 1};
    // each class: |2/3 - 0.8| / 2 + |1/3 - 0.3| / 2 = 1/12
    CHECK(std::abs(classwise_ece(p, y, BinningConfig{2}) - 1.0 / 12.0) < 1e-6);
}

TEST_CASE("ecce cumulative cancellation") {
    // class 0: bin 0 residual +0.1, bin 1 residual -0.1, equal weights 1/2
    const Tensor2D p = rows(2, {0.4f, 0.6f, 0.4f, 0.6f, 0.6f, 0.4f, 0.6f, 0.4f});
    const std::vector<int> y{0, 1, 0, 1};
    const BinningConfig two{2};
    CHECK(std::abs(ecce_for_class(p, y, 0, two) - 0.05) < 1e-6);
    CHECK(std::abs(ecce_for_class(p, y, 1, two) - 0.05) < 1e-6);
    CHECK(std::abs(ecce(p, y, two) - 0.05) < 1e-6);
    CHECK(std::abs(ecce(p, y, two, ClassReduction::Max) - 0.05) < 1e-6);
    // the non-cumulative binned error sees both residuals
    CHECK(std::abs(classwise_ece(p, y, two) - 0.1) < 1e-6);
}

TEST_CASE("lce and mlce with a uniform kernel") {
    const Tensor2D p = rows(2, {0.7f, 0.3f, 0.6f, 0.4f});
    const std::vector<int> y{0, 1};
    const Tensor2D x = line({0.0f, 1.0f});
    CHECK(std::abs(lce(p, y, x, one_bin, flat_kernel) - 0.15) < 1e-6);
    CHECK(std::abs(mlce(p, y, x, one_bin, flat_kernel) - 0.3) < 1e-6);
    for (double r : local_residuals(p, y, x, one_bin, flat_kernel)) CHECK(std::abs(r - 0.3) < 1e-6);
}

TEST_CASE("a lone sample in its bin is its own neighbourhood") {
    const Tensor2D p = rows(2, {0.95f, 0.05f, 0.55f, 0.45f});
    const std::vector<int> y{1, 0};
    const Tensor2D x = line({0.0f, 0.0f});
    const auto r = local_residuals(p, y, x);
    CHECK(std::abs(r[0] - 1.9) < 1e-6);
    CHECK(std::abs(r[1] - 0.9) < 1e-6);
    CHECK(std::abs(mlce(p, y, x) - 1.9) < 1e-6);
    CHECK(std::abs(lce(p, y, x) - (1.9 + 0.9) / 4.0) < 1e-6);
}

TEST_CASE("nll and accuracy") {
    const Tensor2D p = rows(3, {0.5f, 0.3f, 0.2f, 0.1f, 0.6f, 0.3f, 0.25f, 0.25f, 0.5f});
    const std::vector<int> y{0, 2, 2};
    CHECK(std::abs(nll(p, y) - -(std::log(0.5) + std::log(0.3) + std::log(0.5)) / 3.0) < 1e-6);
    CHECK(std::abs(accuracy(p, y) - 2.0 / 3.0) < 1e-12);

    const Tensor2D tie = rows(3, {0.4f, 0.4f, 0.2f});
    CHECK(accuracy(tie, std::vector<int>{1}) == 0.0);
    CHECK(accuracy(tie, std::vector<int>{0}) == 1.0);

    const Tensor2D u(8, 4, 0.25f);
    CHECK(std::abs(nll(u, std::vector<int>(8, 3)) - std::log(4.0)) < 1e-6);
    // zero probability on the label is clamped
    CHECK(nll(rows(2, {1.0f, 0.0f}), std::vector<int>{1}) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("a perfect predictor scores zero everywhere") {
    Rng rng(1);
    const std::size_t n = 40;
    const auto y = testutil::random_labels(rng, n, 4);
    Tensor2D p(n, 4);
    for (std::size_t i = 0; i < n; ++i) p(i, static_cast<std::size_t>(y[i])) = 1.0f;
    const Tensor2D x = testutil::random_normal(rng, n, 3);
    const MetricsReport r = evaluate(p, y, x, MetricsOptions{{15}, {1.0}, 4});
    CHECK(r.ece == 0.0);
    CHECK(r.classwise_ece == 0.0);
    CHECK(r.ecce == 0.0);
    CHECK(r.lce == 0.0);
    CHECK(r.mlce == 0.0);
    CHECK(r.nll == 0.0);
    CHECK(r.acc == 1.0);
    for (const auto& b : r.ess_curve) CHECK(b.mean_residual == 0.0);
}

TEST_CASE("metrics agree with brute force oracles") {
    Rng rng(2);
    for (int rep = 0; rep < 5; ++rep) {
        const std::size_t n = 50, k = 2 + rng.below(4);
        const Tensor2D p = testutil::random_probs(rng, n, k);
        const auto y = testutil::random_labels(rng, n, k);
        const Tensor2D x = testutil::random_normal(rng, n, 3);
        for (int nb : {1, 5, 15}) {
            const BinningConfig b{static_cast<std::size_t>(nb)};
            for (double g : {0.5, 2.0, 10.0}) {
                const KernelConfig kc{g};
                CHECK(std::abs(lce(p, y, x, b, kc) - oracle::lce(p, y, x, nb, g)) < 1e-6);
                CHECK(std::abs(mlce(p, y, x, b, kc) - oracle::mlce(p, y, x, nb, g)) < 1e-6);
                const auto ours = local_residuals(p, y, x, b, kc);
                const auto theirs = oracle::binned_residuals(p, y, x, nb, g);
                for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(ours[i] - theirs[i]) < 1e-6);
            }
            CHECK(std::abs(ece(p, y, b) - oracle::ece(p, y, nb)) < 1e-6);
            CHECK(std::abs(classwise_ece(p, y, b) - oracle::classwise_ece(p, y, nb)) < 1e-6);
            CHECK(std::abs(ecce(p, y, b) - oracle::ecce_mean(p, y, nb)) < 1e-6);
        }
        CHECK(std::abs(nll(p, y) - oracle::nll(p, y)) < 1e-6);
        CHECK(accuracy(p, y) == oracle::acc(p, y));

        const EssAnalysis a = ess_analysis(p, y, x, KernelConfig{1.5}, 5);
        const auto ess = oracle::ess(x, 1.5);
        const auto res = oracle::full_residuals(p, y, x, 1.5);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(a.ess[i] - ess[i]) < 1e-6 * ess[i]);
            CHECK(std::abs(a.residual[i] - res[i]) < 1e-6);
        }
    }
}

TEST_CASE("metrics are invariant to row order") {
    Rng rng(3);
    const std::size_t n = 60;
    const Tensor2D p = testutil::random_probs(rng, n, 3);
    const auto y = testutil::random_labels(rng, n, 3);
    const Tensor2D x = testutil::random_normal(rng, n, 2);
    const auto perm = rng.permutation(n);
    std::vector<int> py(n);
    for (std::size_t i = 0; i < n; ++i) py[i] = y[perm[i]];
    const Tensor2D pp = p.gather_rows(perm), px = x.gather_rows(perm);
    const MetricsOptions opts{{10}, {1.0}, 6};
    const MetricsReport a = evaluate(p, y, x, opts), b = evaluate(pp, py, px, opts);
    CHECK(a.ece == doctest::Approx(b.ece).epsilon(1e-12));
    CHECK(a.classwise_ece == doctest::Approx(b.classwise_ece).epsilon(1e-12));
    CHECK(a.ecce == doctest::Approx(b.ecce).epsilon(1e-12));
    CHECK(a.lce == doctest::Approx(b.lce).epsilon(1e-12));
    CHECK(a.mlce == doctest::Approx(b.mlce).epsilon(1e-12));
    CHECK(a.nll == doctest::Approx(b.nll).epsilon(1e-12));
    CHECK(a.acc == b.acc);
}

// Each cumulative term is bounded by the residuals it accumulates, so bin b's
// residual is counted once for every later partial sum.
TEST_CASE("ecce obeys the triangle inequality over partial sums") {
    Rng rng(4);
    const BinningConfig bins{8};
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 30 + rng.below(50), k = 2 + rng.below(3);
        const Tensor2D p = testutil::random_probs(rng, n, k);
        const auto y = testutil::random_labels(rng, n, k);
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<double> per_bin(bins.n_bins, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                per_bin[bins.bin_of(p(i, c))] += ((y[i] == int(c) ? 1.0 : 0.0) - p(i, c)) / double(n);
            double bound = 0.0, prefix = 0.0, cumulative = 0.0;
            for (double v : per_bin) {
                prefix += std::abs(v);
                bound += prefix;
                cumulative += v;
            }
            const double e = ecce_for_class(p, y, c, bins);
            CHECK(e <= bound + 1e-12);
            CHECK(e >= std::abs(cumulative) - 1e-12);
        }
    }
}

TEST_CASE("mlce dominates every bin's mean residual") {
    Rng rng(5);
    const std::size_t n = 80;
    const Tensor2D p = testutil::random_probs(rng, n, 3);
    const auto y = testutil::random_labels(rng, n, 3);
    const Tensor2D x = testutil::random_normal(rng, n, 2);
    const BinningConfig bins{6};
    const auto r = local_residuals(p, y, x, bins, KernelConfig{1.0});
    const double worst = mlce(p, y, x, bins, KernelConfig{1.0});
    std::vector<double> sum(6, 0.0), count(6, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = p.row(i);
        const std::size_t b = bins.bin_of(*std::max_element(row.begin(), row.end()));
        sum[b] += r[i];
        count[b] += 1.0;
    }
    for (std::size_t b = 0; b < 6; ++b)
        if (count[b] > 0) CHECK(sum[b] / count[b] <= worst + 1e-12);
}

TEST_CASE("ess of identical points is n") {
    const std::size_t n = 12;
    Rng rng(6);
    const Tensor2D p = testutil::random_probs(rng, n, 3);
    const auto y = testutil::random_labels(rng, n, 3);
    const Tensor2D x(n, 4, 0.5f);
    const EssAnalysis a = ess_analysis(p, y, x, KernelConfig{1.0}, 3);
    for (double e : a.ess) CHECK(e == doctest::Approx(double(n)).epsilon(1e-12));
    REQUIRE(a.bins.size() == 3);
    std::size_t total = 0;
    for (const auto& b : a.bins) {
        CHECK(b.mean_ess == doctest::Approx(double(n)));
        total += b.count;
    }
    CHECK(total == n);
    CHECK(a.bins.back().quantile == doctest::Approx(1.0));
}

TEST_CASE("an isolated point has ESS near 1 and lands in the lowest bin") {
    const std::size_t n = 20;
    Rng rng(7);
    const Tensor2D p = testutil::random_probs(rng, n, 3);
    const auto y = testutil::random_labels(rng, n, 3);
    Tensor2D x(n, 2, 0.0f);
    x(13, 0) = 100.0f;
    const EssAnalysis a = ess_analysis(p, y, x, KernelConfig{1.0}, 10);
    CHECK(a.ess[13] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a.bins[0].count == 2);
    CHECK(a.bins[0].mean_ess == doctest::Approx((1.0 + 19.0) / 2.0).epsilon(1e-9));
    for (std::size_t b = 1; b < a.bins.size(); ++b) CHECK(a.bins[b].mean_ess == doctest::Approx(19.0).epsilon(1e-9));
    CHECK(a.bins[0].mean_residual == doctest::Approx((a.residual[13] + a.residual[0]) / 2.0));
}

TEST_CASE("ess needs at least as many rows as bins") {
    Rng rng(8);
    const Tensor2D p = testutil::random_probs(rng, 5, 2);
    const auto y = testutil::random_labels(rng, 5, 2);
    CHECK_THROWS_AS(ess_analysis(p, y, Tensor2D(5, 1), KernelConfig{}, 6), ConfigError);
    CHECK_NOTHROW(ess_analysis(p, y, Tensor2D(5, 1), KernelConfig{}, 5));
}

TEST_CASE("evaluate validates its inputs and serialises") {
    Rng rng(9);
    Tensor2D p = testutil::random_probs(rng, 20, 3);
    const auto y = testutil::random_labels(rng, 20, 3);
    const Tensor2D x = testutil::random_normal(rng, 20, 2);
    const auto j = to_json(evaluate(p, y, x, MetricsOptions{{15}, {10.0}, 4}));
    for (const char* key : {"ece", "classwise_ece", "ecce", "lce", "mlce", "nll", "acc", "ess_curve"})
        CHECK(j.contains(key));
    CHECK(j["ess_curve"].size() == 4);

    CHECK_THROWS_AS(evaluate(p, std::vector<int>(19, 0), x), ConfigError);
    CHECK_THROWS_AS(evaluate(p, std::vector<int>(20, 3), x), ConfigError);
    CHECK_THROWS_AS(evaluate(p, y, Tensor2D(19, 2)), ConfigError);
    p(4, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(evaluate(p, y, x), NumericalError);
}
