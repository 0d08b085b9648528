#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/metrics.hpp"
#include "vqcal/synthetic.hpp"

using namespace vqcal;

namespace {

SyntheticSpec two_region_spec(std::vector<std::vector<double>> conf_a, std::vector<std::vector<double>> conf_b) {
    SyntheticSpec s;
    s.n_regions = 2;
    s.n_classes = 2;
    s.dim = 16;
    s.slots = 4;
    s.samples_per_split = {3000, 300, 3000};
    s.confusions = {std::move(conf_a), std::move(conf_b)};
    s.seed = 17;
    return s;
}

CalibrationDataset region_rows(const CalibrationDataset& ds, const std::vector<std::size_t>& regions, std::size_t r,
                               Split split) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (regions[i] == r && ds.split_tags[i] == split) idx.push_back(i);
    }
    return ds.rows(idx);
}

}  // namespace

TEST_CASE("benchmark spec is valid and well formed") {
    const SyntheticSpec s = benchmark_spec(3);
    CHECK_NOTHROW(s.validate());
    CHECK(s.n_regions == 4);
    CHECK(s.n_classes == 4);
    CHECK(s.dim == 32);
    CHECK(s.slots == 8);
    CHECK(s.samples_per_split == std::array<std::size_t, 3>{5000, 500, 5000});
    for (const auto& m : s.confusions)
        for (const auto& row : m) {
            double t = 0;
            for (double v : row) t += v;
            CHECK(std::abs(t - 1.0) < 1e-9);
        }
}

TEST_CASE("region centers are at least 10 sqrt(dim) apart") {
    for (auto [r, w, dim] : {std::tuple{4, 8, 32}, std::tuple{2, 4, 16}, std::tuple{3, 8, 64}}) {
        const auto counts = region_slot_counts(r, w);
        const double scale = region_center_scale(r, w, dim);
        for (std::size_t a = 0; a < counts.size(); ++a) {
            for (std::size_t b = a + 1; b < counts.size(); ++b) {
                const double diff = std::abs(double(counts[a]) - double(counts[b]));
                // centers differ by 2*scale on each slot whose sign differs
                CHECK(2.0 * scale * std::sqrt(diff) >= 10.0 * std::sqrt(double(dim)));
            }
        }
    }
}

TEST_CASE("generation is deterministic and seed dependent") {
    SyntheticSpec s = benchmark_spec(5);
    s.samples_per_split = {400, 50, 100};
    const auto a = make_synthetic(s);
    const auto b = make_synthetic(s);
    CHECK(a.embeddings == b.embeddings);
    CHECK(a.base_probs == b.base_probs);
    CHECK(a.labels == b.labels);
    CHECK(a.split_tags == b.split_tags);
    s.seed = 6;
    CHECK_FALSE(make_synthetic(s).embeddings == a.embeddings);
    CHECK(a.indices(Split::TrainCal).size() == 400);
    CHECK(a.indices(Split::ValCal).size() == 50);
    CHECK(a.indices(Split::Test).size() == 100);
    CHECK_NOTHROW(validate_dataset(a));
}

TEST_CASE("spec json round trip and validation") {
    const SyntheticSpec s = benchmark_spec(9);
    const SyntheticSpec back = synthetic_spec_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));

    auto j = to_json(s);
    j["confusions"][0][0][0] = 0.5;
    CHECK_THROWS_AS(synthetic_spec_from_json(j), ConfigError);
    j = to_json(s);
    j["n_regions"] = 1;
    CHECK_THROWS_AS(synthetic_spec_from_json(j), ConfigError);
    j = to_json(s);
    j["n_classes"] = "four";
    CHECK_THROWS_AS(synthetic_spec_from_json(j), ConfigError);
    j = to_json(s);
    j["dim"] = 30;
    CHECK_THROWS_AS(synthetic_spec_from_json(j), ConfigError);
}

TEST_CASE("swapped confusions make the pooled model miscalibrated in every region") {
    SyntheticSpec s = two_region_spec({{0.9, 0.1}, {0.1, 0.9}}, {{0.1, 0.9}, {0.9, 0.1}});
    // with equal masses the pooled conditional is exactly uniform, so one
    // region has to dominate for the pooled model to be confidently wrong
    s.region_weights = {0.7, 0.3};
    std::vector<std::size_t> regions;
    const auto ds = make_synthetic(s, regions);
    for (std::size_t r = 0; r < 2; ++r) {
        const auto part = region_rows(ds, regions, r, Split::Test);
        CHECK(classwise_ece(part.base_probs, part.labels) > 0.2);
    }
}

TEST_CASE("a shared confusion gives statistically indistinguishable regions") {
    const std::vector<std::vector<double>> m{{0.8, 0.2}, {0.2, 0.8}};
    SyntheticSpec s = two_region_spec(m, m);
    s.n_regions = 4;
    s.slots = 8;
    s.dim = 32;
    s.confusions = {m, m, m, m};
    s.samples_per_split = {4000, 400, 8000};
    std::vector<std::size_t> regions;
    const auto ds = make_synthetic(s, regions);

    std::vector<double> per_region;
    for (std::size_t r = 0; r < 4; ++r) {
        const auto part = region_rows(ds, regions, r, Split::Test);
        per_region.push_back(classwise_ece(part.base_probs, part.labels));
    }
    const double spread = *std::max_element(per_region.begin(), per_region.end()) -
                          *std::min_element(per_region.begin(), per_region.end());

    const auto ref = region_rows(ds, regions, 0, Split::Test);
    Rng rng(1);
    std::vector<double> boot;
    for (int b = 0; b < 30; ++b) {
        std::vector<std::size_t> idx(ref.size());
        for (auto& v : idx) v = rng.below(ref.size());
        const auto sample = ref.rows(idx);
        boot.push_back(classwise_ece(sample.base_probs, sample.labels));
    }
    const double boot_spread =
        *std::max_element(boot.begin(), boot.end()) - *std::min_element(boot.begin(), boot.end());
    CHECK(spread < 2.0 * boot_spread);
}
