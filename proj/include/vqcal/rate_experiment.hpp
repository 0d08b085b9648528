#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

namespace vqcal {

/// Plant-and-recover run for how the error of one codeword's calibration
/// parameters shrinks with the number of samples that use it.
///
/// Calibrator parameters (|C| = 4, |Y| = 3, w = 2) are drawn at random and
/// labels are sampled from the calibrated posterior they define. Codeword 0
/// occupies slot 0 in `count` rows; `background` further rows use only the
/// other codewords. After a full-batch fit, the error of codeword 0 is
/// ||a_0 b_0^T - a*_0 b*_0^T||_F (the outer product is what the model can
/// identify; a_0 and b_0 alone are only defined up to a rescaling).
struct RateConfig {
    std::vector<std::size_t> counts{50, 200, 800, 3200};
    std::size_t repetitions = 4;
    std::size_t background = 5000;
    std::size_t steps = 3000;
    double lr = 1e-2;
    std::uint64_t seed = 7;
};

struct RatePoint {
    std::size_t count = 0;
    double mean_error = 0.0;
};

struct RateResult {
    std::vector<RatePoint> points;
    double slope = 0.0;  // least-squares slope of log error on log count
};

RateResult run_rate_experiment(const RateConfig& cfg);
nlohmann::json to_json(const RateResult& r);

}  // namespace vqcal
