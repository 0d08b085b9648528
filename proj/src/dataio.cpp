#include "vqcal/dataio.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "vqcal/errors.hpp"

namespace vqcal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::string header(DType dtype, std::uint64_t rows, std::uint64_t cols) {
    std::string out = "CALT";
    put_u32(out, kCaltVersion);
    out.push_back(static_cast<char>(dtype));
    out.push_back(static_cast<char>(2));
    put_u64(out, rows);
    put_u64(out, cols);
    return out;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

std::string read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path.string());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

struct RawTensor {
    DType dtype;
    std::uint64_t rows;
    std::uint64_t cols;
    const unsigned char* payload;
};

RawTensor parse(const std::string& bytes, const fs::path& path) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < kCaltHeaderBytes) {
        throw FormatError(path.string() + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
    }
    if (std::memcmp(p, "CALT", 4) != 0) {
        throw FormatError(path.string() + ": bad magic '" + bytes.substr(0, 4) + "', expected 'CALT'");
    }
    const auto version = static_cast<std::uint32_t>(get_le(p + 4, 4));
    if (version != kCaltVersion) {
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    }
    const std::uint8_t dtype = p[8];
    if (dtype > 1) throw FormatError(path.string() + ": unknown dtype " + std::to_string(dtype));
    if (p[9] != 2) throw FormatError(path.string() + ": ndim must be 2, got " + std::to_string(p[9]));
    RawTensor raw{static_cast<DType>(dtype), get_le(p + 10, 8), get_le(p + 18, 8), p + kCaltHeaderBytes};
    const std::uint64_t elem = raw.dtype == DType::F32 ? 4 : 8;
    if (raw.cols != 0 && raw.rows > UINT64_MAX / raw.cols / elem) {
        throw FormatError(path.string() + ": shape overflow");
    }
    const std::uint64_t expected = raw.rows * raw.cols * elem;
    const std::uint64_t have = bytes.size() - kCaltHeaderBytes;
    if (have < expected) {
        throw FormatError(path.string() + ": truncated payload, shape " + std::to_string(raw.rows) + "x" +
                          std::to_string(raw.cols) + " needs " + std::to_string(expected) + " bytes, found " +
                          std::to_string(have));
    }
    if (have > expected) {
        throw FormatError(path.string() + ": " + std::to_string(have - expected) + " trailing bytes after payload");
    }
    return raw;
}

}  // namespace

void write_tensor(const fs::path& path, const Tensor2D& t) {
    if (t.data.size() != t.rows * t.cols) throw ConfigError("write_tensor: data length does not match shape");
    if (!t.all_finite()) throw ConfigError("write_tensor: refusing to write non-finite entries to " + path.string());
    std::string bytes = header(DType::F32, t.rows, t.cols);
    bytes.reserve(bytes.size() + t.data.size() * 4);
    for (float v : t.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(bytes, bits);
    }
    write_bytes(path, bytes);
}

Tensor2D read_tensor(const fs::path& path) {
    const std::string bytes = read_bytes(path);
    const RawTensor raw = parse(bytes, path);
    if (raw.dtype != DType::F32) throw FormatError(path.string() + ": expected f32 tensor");
    Tensor2D t(raw.rows, raw.cols);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const auto bits = static_cast<std::uint32_t>(get_le(raw.payload + 4 * i, 4));
        std::memcpy(&t.data[i], &bits, 4);
    }
    if (!t.all_finite()) throw FormatError(path.string() + ": contains non-finite entries");
    return t;
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
    std::string bytes = header(DType::I64, labels.size(), 1);
    for (int y : labels) put_u64(bytes, static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
    write_bytes(path, bytes);
}

std::vector<int> read_labels(const fs::path& path) {
    const std::string bytes = read_bytes(path);
    const RawTensor raw = parse(bytes, path);
    if (raw.dtype != DType::I64) throw FormatError(path.string() + ": expected i64 tensor");
    if (raw.cols != 1) throw FormatError(path.string() + ": labels must have shape n x 1");
    std::vector<int> out(raw.rows);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto v = static_cast<std::int64_t>(get_le(raw.payload + 8 * i, 8));
        if (v < INT32_MIN || v > INT32_MAX) throw FormatError(path.string() + ": label out of int range");
        out[i] = static_cast<int>(v);
    }
    return out;
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::TrainCal: return "train_cal";
        case Split::ValCal: return "val_cal";
        case Split::Test: return "test";
    }
    return "test";
}

Split parse_split(std::string_view name) {
    if (name == "train_cal") return Split::TrainCal;
    if (name == "val_cal") return Split::ValCal;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split name '" + std::string(name) + "'");
}

std::vector<std::size_t> CalibrationDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split_tags.size(); ++i) {
        if (split_tags[i] == s) out.push_back(i);
    }
    return out;
}

CalibrationDataset CalibrationDataset::rows(std::span<const std::size_t> idx) const {
    CalibrationDataset out;
    out.embeddings = embeddings.gather_rows(idx);
    out.base_probs = base_probs.gather_rows(idx);
    out.labels.reserve(idx.size());
    out.split_tags.reserve(idx.size());
    for (std::size_t i : idx) {
        out.labels.push_back(labels[i]);
        out.split_tags.push_back(split_tags[i]);
    }
    return out;
}

CalibrationDataset CalibrationDataset::subset(Split s) const {
    const auto idx = indices(s);
    return rows(idx);
}

void validate_dataset(const CalibrationDataset& ds) {
    const std::size_t n = ds.labels.size();
    if (ds.embeddings.rows != n || ds.base_probs.rows != n || ds.split_tags.size() != n) {
        throw ConfigError("dataset row-count mismatch: embeddings " + std::to_string(ds.embeddings.rows) +
                          ", probs " + std::to_string(ds.base_probs.rows) + ", labels " + std::to_string(n) +
                          ", split tags " + std::to_string(ds.split_tags.size()));
    }
    if (!ds.embeddings.all_finite() || !ds.base_probs.all_finite()) {
        throw ConfigError("dataset contains non-finite values");
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (float p : ds.base_probs.row(i)) {
            if (p < 0.0f) throw ConfigError("probability row " + std::to_string(i) + " has a negative entry");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-5) {
            throw ConfigError("probability row " + std::to_string(i) + " is not on the simplex (sums to " +
                              std::to_string(sum) + ")");
        }
        const int y = ds.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= ds.base_probs.cols) {
            throw ConfigError("label " + std::to_string(y) + " at row " + std::to_string(i) + " out of range for " +
                              std::to_string(ds.base_probs.cols) + " classes");
        }
    }
}

std::vector<Split> default_splits(std::size_t n) {
    std::vector<Split> tags(n, Split::Test);
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_val = n / 10;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) tags[i] = Split::TrainCal;
        else if (i < n_train + n_val) tags[i] = Split::ValCal;
    }
    return tags;
}

CalibrationDataset load_dataset(const fs::path& dir) {
    CalibrationDataset ds;
    ds.embeddings = read_tensor(dir / "embeddings.calt");
    ds.base_probs = read_tensor(dir / "probs.calt");
    ds.labels = read_labels(dir / "labels.calt");
    const std::size_t n = ds.labels.size();
    if (ds.embeddings.rows != n || ds.base_probs.rows != n) {
        throw ConfigError("dataset row-count mismatch in " + dir.string() + ": embeddings " +
                          std::to_string(ds.embeddings.rows) + ", probs " + std::to_string(ds.base_probs.rows) +
                          ", labels " + std::to_string(n));
    }
    const fs::path splits_path = dir / "splits.json";
    if (fs::exists(splits_path)) {
        ds.split_tags.assign(n, Split::Test);
        std::vector<bool> seen(n, false);
        json j;
        try {
            std::ifstream f(splits_path);
            j = json::parse(f);
        } catch (const json::exception& e) {
            throw FormatError(splits_path.string() + ": " + e.what());
        }
        if (!j.is_object()) throw FormatError(splits_path.string() + ": expected a JSON object");
        for (const auto& [name, rows] : j.items()) {
            const Split s = parse_split(name);
            if (!rows.is_array()) throw FormatError(splits_path.string() + ": split '" + name + "' is not an array");
            for (const auto& r : rows) {
                if (!r.is_number_integer() || r.get<long long>() < 0 ||
                    static_cast<std::size_t>(r.get<long long>()) >= n) {
                    throw ConfigError(splits_path.string() + ": invalid row index " + r.dump() + " in '" + name + "'");
                }
                const auto idx = static_cast<std::size_t>(r.get<long long>());
                if (seen[idx]) throw ConfigError(splits_path.string() + ": row " + std::to_string(idx) + " listed twice");
                seen[idx] = true;
                ds.split_tags[idx] = s;
            }
        }
    } else {
        ds.split_tags = default_splits(n);
    }
    validate_dataset(ds);
    return ds;
}

void save_dataset(const fs::path& dir, const CalibrationDataset& ds) {
    validate_dataset(ds);
    fs::create_directories(dir);
    write_tensor(dir / "embeddings.calt", ds.embeddings);
    write_tensor(dir / "probs.calt", ds.base_probs);
    write_labels(dir / "labels.calt", ds.labels);
    json j = {{"train_cal", ds.indices(Split::TrainCal)},
              {"val_cal", ds.indices(Split::ValCal)},
              {"test", ds.indices(Split::Test)}};
    std::ofstream f(dir / "splits.json");
    if (!f) throw IoError("cannot write " + (dir / "splits.json").string());
    f << j.dump() << "\n";
}

}  // namespace vqcal
