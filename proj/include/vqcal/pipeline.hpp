#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vqcal/baselines.hpp"
#include "vqcal/calibrator.hpp"
#include "vqcal/dataio.hpp"
#include "vqcal/metrics.hpp"
#include "vqcal/quantizer.hpp"
#include "vqcal/training.hpp"
#include "vqcal/vqhead.hpp"

namespace vqcal {

enum class Method { NC, TS, DC, VqNC, VqDC, VQ };

std::string_view method_name(Method m);
/// Accepts nc, ts, dc, vq-nc, vq-dc, vq. Throws ConfigError otherwise.
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();
bool uses_codebook(Method m);

/// Everything a fit or eval run depends on.
struct RunConfig {
    Method method = Method::VQ;
    std::size_t w = 64;
    std::size_t codebook_size = 64;
    double decay = 0.99;
    TrainConfig train;
    std::size_t bins = 15;
    double bandwidth = 10.0;
    std::size_t ess_bins = 10;
    ClassReduction ecce_reduction = ClassReduction::Mean;
    bool learn_sigma = false;
    bool strict_identity = false;
    CellPrior cell_prior = CellPrior::None;
    double dc_l2 = 1e-3;

    void validate() const;
    MetricsOptions metric_options() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Keys missing from `j` keep the value in `defaults`; unknown keys are an error.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig defaults = {});

/// Checks the config against a dataset (slot divisibility, enough slots to
/// seed the codebook, non-empty train and validation splits).
void check_config_for_dataset(const RunConfig& cfg, const CalibrationDataset& ds);

struct FittedModel {
    Method method = Method::NC;
    std::size_t n_classes = 0;
    SegmentationConfig seg;
    std::optional<Codebook> codebook;
    std::optional<LinearHead> head;
    std::optional<CalibratorParams> calibrator;
    std::optional<TemperatureParam> temperature;
    std::optional<DirichletParams> dirichlet;
    nlohmann::json logs = nlohmann::json::object();
};

/// Codebook initialisation from train_cal slots followed by quantization-aware
/// head training.
Stage1Result fit_stage1(const CalibrationDataset& ds, const RunConfig& cfg);

/// Fits `cfg.method`. VQ methods reuse `stage1` when given.
FittedModel fit_model(const CalibrationDataset& ds, const RunConfig& cfg, const Stage1Result* stage1 = nullptr);

/// Probabilities of the fitted model for every row of `ds`.
Tensor2D model_probs(const FittedModel& model, const CalibrationDataset& ds);

void save_model(const std::filesystem::path& dir, const FittedModel& model);
FittedModel load_model(const std::filesystem::path& dir);

struct EvalResult {
    Method method = Method::NC;
    std::uint64_t seed = 0;
    std::size_t w = 0;
    std::size_t codebook_size = 0;
    MetricsReport metrics;
    std::optional<UsageStats> usage;  // codeword usage on the evaluated split
};

/// Metrics on the test split.
EvalResult evaluate_model(const FittedModel& model, const CalibrationDataset& ds, const RunConfig& cfg);

nlohmann::json to_json(const EvalResult& r);
std::string csv_header();
std::string csv_row(const EvalResult& r);

/// Fits and evaluates `cfg.method` for every (w, |C|) pair.
std::vector<EvalResult> ablate(const CalibrationDataset& ds, const RunConfig& cfg, const std::vector<std::size_t>& ws,
                               const std::vector<std::size_t>& sizes);

}  // namespace vqcal
