#include "vqcal/artifacts.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "vqcal/dataio.hpp"
#include "vqcal/errors.hpp"

namespace vqcal {

using nlohmann::json;
namespace fs = std::filesystem;

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

namespace {

Tensor2D column(std::span<const float> v) { return Tensor2D(v.size(), 1, std::vector<float>(v.begin(), v.end())); }

Tensor2D column(std::span<const double> v) {
    Tensor2D t(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i]);
    return t;
}

Tensor2D read_shaped(const fs::path& path, std::size_t rows, std::size_t cols) {
    Tensor2D t = read_tensor(path);
    if (t.rows != rows || t.cols != cols) {
        throw FormatError(path.string() + ": expected shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", found " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    }
    return t;
}

template <class T>
T field(const json& j, const char* key, const fs::path& where) {
    if (!j.contains(key)) throw FormatError(where.string() + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(where.string() + ": bad field '" + key + "': " + e.what());
    }
}

}  // namespace

void save_codebook(const fs::path& dir, const Codebook& cb, const SegmentationConfig& seg) {
    fs::create_directories(dir);
    write_tensor(dir / "codebook.calt", cb.codewords);
    write_tensor(dir / "codebook_ema_size.calt", column(std::span<const double>(cb.ema_cluster_size)));
    Tensor2D sums(cb.size(), cb.dim());
    for (std::size_t i = 0; i < sums.data.size(); ++i) sums.data[i] = static_cast<float>(cb.ema_cluster_sum[i]);
    write_tensor(dir / "codebook_ema_sum.calt", sums);
    write_json(dir / "codebook.json",
               {{"w", seg.w}, {"d", seg.d}, {"m_prime", seg.m_prime}, {"size", cb.size()}, {"decay", cb.decay}});
}

Codebook load_codebook(const fs::path& dir, SegmentationConfig& seg) {
    const fs::path meta_path = dir / "codebook.json";
    const json meta = read_json(meta_path);
    seg.w = field<std::size_t>(meta, "w", meta_path);
    seg.d = field<std::size_t>(meta, "d", meta_path);
    seg.m_prime = field<std::size_t>(meta, "m_prime", meta_path);
    try {
        seg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(meta_path.string() + ": " + e.what());
    }
    const auto size = field<std::size_t>(meta, "size", meta_path);
    Codebook cb;
    cb.decay = field<double>(meta, "decay", meta_path);
    cb.codewords = read_shaped(dir / "codebook.calt", size, seg.d);
    const Tensor2D sizes = read_shaped(dir / "codebook_ema_size.calt", size, 1);
    const Tensor2D sums = read_shaped(dir / "codebook_ema_sum.calt", size, seg.d);
    cb.ema_cluster_size.assign(sizes.data.begin(), sizes.data.end());
    cb.ema_cluster_sum.assign(sums.data.begin(), sums.data.end());
    return cb;
}

void save_head(const fs::path& dir, const LinearHead& head) {
    fs::create_directories(dir);
    write_tensor(dir / "head_weight.calt", head.weight);
    write_tensor(dir / "head_bias.calt", column(std::span<const float>(head.bias)));
}

LinearHead load_head(const fs::path& dir) {
    LinearHead head;
    head.weight = read_tensor(dir / "head_weight.calt");
    const Tensor2D bias = read_shaped(dir / "head_bias.calt", head.weight.rows, 1);
    head.bias = bias.data;
    return head;
}

void save_calibrator(const fs::path& dir, const CalibratorParams& p) {
    fs::create_directories(dir);
    write_tensor(dir / "calibrator_A.calt", p.A);
    write_tensor(dir / "calibrator_B.calt", p.B);
    write_tensor(dir / "calibrator_sigma2.calt", column(std::span<const float>(p.sigma2)));
    write_tensor(dir / "calibrator_beta.calt", column(std::span<const float>(p.beta)));
    json priors = json::array();
    for (const auto& [cell, lp] : p.cell_prior) priors.push_back({{"cell", cell.s}, {"log_prior", lp}});
    write_json(dir / "calibrator.json", {{"codebook_size", p.codebook_size()},
                                         {"n_classes", p.n_classes()},
                                         {"w", p.slots()},
                                         {"offset", p.offset},
                                         {"learn_sigma", p.learn_sigma},
                                         {"strict_identity", p.strict_identity},
                                         {"cell_prior", p.cell_prior_mode == CellPrior::Empirical ? "empirical" : "none"},
                                         {"cell_priors", priors}});
}

CalibratorParams load_calibrator(const fs::path& dir) {
    const fs::path meta_path = dir / "calibrator.json";
    const json meta = read_json(meta_path);
    const auto c = field<std::size_t>(meta, "codebook_size", meta_path);
    const auto k = field<std::size_t>(meta, "n_classes", meta_path);
    const auto w = field<std::size_t>(meta, "w", meta_path);
    CalibratorParams p;
    p.A = read_shaped(dir / "calibrator_A.calt", c, k);
    p.B = read_shaped(dir / "calibrator_B.calt", c, k);
    p.sigma2 = read_shaped(dir / "calibrator_sigma2.calt", w, 1).data;
    p.beta = read_shaped(dir / "calibrator_beta.calt", k, 1).data;
    for (float s : p.sigma2) {
        if (!(s > 0.0f)) throw FormatError(meta_path.string() + ": sigma^2 entries must be positive");
    }
    p.offset = field<double>(meta, "offset", meta_path);
    p.learn_sigma = field<bool>(meta, "learn_sigma", meta_path);
    p.strict_identity = field<bool>(meta, "strict_identity", meta_path);
    const auto mode = field<std::string>(meta, "cell_prior", meta_path);
    if (mode == "empirical") {
        p.cell_prior_mode = CellPrior::Empirical;
    } else if (mode != "none") {
        throw FormatError(meta_path.string() + ": unknown cell_prior '" + mode + "'");
    }
    for (const auto& entry : meta.value("cell_priors", json::array())) {
        IndexSequence cell{field<std::vector<CodeIndex>>(entry, "cell", meta_path)};
        auto lp = field<std::vector<float>>(entry, "log_prior", meta_path);
        if (cell.size() != w || lp.size() != k) throw FormatError(meta_path.string() + ": malformed cell prior entry");
        p.cell_prior.emplace(std::move(cell), std::move(lp));
    }
    return p;
}

void save_temperature(const fs::path& dir, const TemperatureParam& t) {
    fs::create_directories(dir);
    write_json(dir / "temperature.json", {{"T", t.T}});
}

TemperatureParam load_temperature(const fs::path& dir) {
    const fs::path path = dir / "temperature.json";
    const TemperatureParam t{field<double>(read_json(path), "T", path)};
    if (!(t.T > 0.0) || !std::isfinite(t.T)) throw FormatError(path.string() + ": temperature must be positive");
    return t;
}

void save_dirichlet(const fs::path& dir, const DirichletParams& p) {
    fs::create_directories(dir);
    write_tensor(dir / "dirichlet_W.calt", p.W);
    write_tensor(dir / "dirichlet_c.calt", column(std::span<const float>(p.c)));
    write_json(dir / "dirichlet.json", {{"n_classes", p.n_classes()}, {"l2", p.l2}});
}

DirichletParams load_dirichlet(const fs::path& dir) {
    const fs::path meta_path = dir / "dirichlet.json";
    const json meta = read_json(meta_path);
    const auto k = field<std::size_t>(meta, "n_classes", meta_path);
    DirichletParams p;
    p.l2 = field<double>(meta, "l2", meta_path);
    p.W = read_shaped(dir / "dirichlet_W.calt", k, k);
    p.c = read_shaped(dir / "dirichlet_c.calt", k, 1).data;
    return p;
}

}  // namespace vqcal
