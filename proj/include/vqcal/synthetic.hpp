#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqcal/dataio.hpp"

namespace vqcal {

/// Region-miscalibration benchmark description.
///
/// Each embedding is split into `slots` contiguous segments. Region r is a
/// fixed +/- pattern on the first coordinate of every slot (regions differ in
/// how many slots are positive), scaled so region centers sit at least
/// 10*sqrt(dim) apart. A latent class c, drawn uniformly, shifts every slot by
/// `class_shift` along a class direction in the remaining slot coordinates.
/// Noise is unit-covariance Gaussian. The observed label is drawn from row c
/// of the region's confusion matrix.
struct SyntheticSpec {
    std::size_t n_regions = 4;
    std::size_t n_classes = 4;
    std::size_t dim = 32;
    std::size_t slots = 8;
    std::array<std::size_t, 3> samples_per_split{5000, 500, 5000};
    /// n_regions matrices, each n_classes x n_classes, rows summing to 1.
    std::vector<std::vector<std::vector<double>>> confusions;
    /// Empty means uniform.
    std::vector<double> region_weights;
    double class_shift = 3.0;
    std::uint64_t seed = 0;

    /// Throws ConfigError on a degenerate or inconsistent spec.
    void validate() const;
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

/// The 4-region / 4-class / dim-32 benchmark: regions of unequal mass with a
/// sharp, a noisy, a shifted and a reversed confusion profile.
SyntheticSpec benchmark_spec(std::uint64_t seed);

/// Generates the dataset, then fits a single multinomial logistic model on the
/// pooled train split and stores its probabilities as base_probs.
CalibrationDataset make_synthetic(const SyntheticSpec& spec);

/// Same as make_synthetic, also returning the region of every row.
CalibrationDataset make_synthetic(const SyntheticSpec& spec, std::vector<std::size_t>& regions);

/// Number of positive slots per region, and the resulting center scale.
std::vector<std::size_t> region_slot_counts(std::size_t n_regions, std::size_t slots);
double region_center_scale(std::size_t n_regions, std::size_t slots, std::size_t dim);

}  // namespace vqcal
