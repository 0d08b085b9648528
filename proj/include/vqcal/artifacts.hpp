#pragma once

#include <filesystem>

#include <json.hpp>

#include "vqcal/baselines.hpp"
#include "vqcal/calibrator.hpp"
#include "vqcal/quantizer.hpp"
#include "vqcal/vqhead.hpp"

namespace vqcal {

/// Pretty-printed UTF-8 JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
/// Throws IoError when missing, FormatError when unparsable.
nlohmann::json read_json(const std::filesystem::path& path);

// Each artifact is one or more CALT tensors plus a JSON sidecar in `dir`.
void save_codebook(const std::filesystem::path& dir, const Codebook& cb, const SegmentationConfig& seg);
Codebook load_codebook(const std::filesystem::path& dir, SegmentationConfig& seg);

void save_head(const std::filesystem::path& dir, const LinearHead& head);
LinearHead load_head(const std::filesystem::path& dir);

void save_calibrator(const std::filesystem::path& dir, const CalibratorParams& params);
CalibratorParams load_calibrator(const std::filesystem::path& dir);

void save_temperature(const std::filesystem::path& dir, const TemperatureParam& t);
TemperatureParam load_temperature(const std::filesystem::path& dir);

void save_dirichlet(const std::filesystem::path& dir, const DirichletParams& p);
DirichletParams load_dirichlet(const std::filesystem::path& dir);

}  // namespace vqcal
