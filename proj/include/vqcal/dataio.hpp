#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vqcal/tensor.hpp"

namespace vqcal {

/// CALT tensor file layout (all integers little-endian):
///   bytes 0-3   magic "CALT"
///   bytes 4-7   u32 version = 1
///   byte  8     u8 dtype (0 = f32, 1 = i64)
///   byte  9     u8 ndim = 2
///   bytes 10-25 u64 rows, u64 cols
///   payload     rows*cols elements, row-major
inline constexpr std::size_t kCaltHeaderBytes = 26;
inline constexpr std::uint32_t kCaltVersion = 1;

enum class DType : std::uint8_t { F32 = 0, I64 = 1 };

/// Refuses non-finite entries.
void write_tensor(const std::filesystem::path& path, const Tensor2D& t);
Tensor2D read_tensor(const std::filesystem::path& path);

/// Integer tensors (labels) are stored as i64 with shape n x 1.
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);

enum class Split : std::uint8_t { TrainCal = 0, ValCal = 1, Test = 2 };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

/// Aligned embeddings, base-model probabilities and labels. Immutable once built.
struct CalibrationDataset {
    Tensor2D embeddings;
    Tensor2D base_probs;
    std::vector<int> labels;
    std::vector<Split> split_tags;

    std::size_t size() const { return labels.size(); }
    std::size_t n_classes() const { return base_probs.cols; }
    std::size_t dim() const { return embeddings.cols; }

    std::vector<std::size_t> indices(Split s) const;
    /// Rows tagged `s`, in original order.
    CalibrationDataset subset(Split s) const;
    CalibrationDataset rows(std::span<const std::size_t> indices) const;
};

/// Checks alignment, simplex rows (tolerance 1e-5) and label range. Throws ConfigError.
void validate_dataset(const CalibrationDataset& ds);

/// Reads embeddings.calt, probs.calt, labels.calt and (optionally) splits.json.
/// Rows not listed in splits.json are tagged test; without splits.json the
/// split is 80/10/10 train_cal/val_cal/test in row order.
CalibrationDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const CalibrationDataset& ds);

std::vector<Split> default_splits(std::size_t n);

}  // namespace vqcal
