#include "vqcal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vqcal/artifacts.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/rng.hpp"

namespace vqcal {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::NC, "nc"},      {Method::TS, "ts"},       {Method::DC, "dc"},
    {Method::VqNC, "vq-nc"}, {Method::VqDC, "vq-dc"}, {Method::VQ, "vq"},
};

std::string_view reduction_name(ClassReduction r) { return r == ClassReduction::Max ? "max" : "mean"; }

ClassReduction parse_reduction(const std::string& s) {
    if (s == "mean") return ClassReduction::Mean;
    if (s == "max") return ClassReduction::Max;
    throw ConfigError("ecce_reduction must be 'mean' or 'max', got '" + s + "'");
}

CellPrior parse_cell_prior(const std::string& s) {
    if (s == "none") return CellPrior::None;
    if (s == "empirical") return CellPrior::Empirical;
    throw ConfigError("cell_prior must be 'none' or 'empirical', got '" + s + "'");
}

// Stage 2 draws from its own stream so that refitting it never perturbs Stage 1.
constexpr std::uint64_t kStage2Stream = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::string_view method_name(Method m) {
    for (const auto& [method, name] : kMethodNames) {
        if (method == m) return name;
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (const auto& [method, n] : kMethodNames) {
        if (n == name) return method;
    }
    throw ConfigError("unknown method '" + std::string(name) + "' (expected nc, ts, dc, vq-nc, vq-dc or vq)");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods{Method::NC, Method::TS, Method::DC, Method::VqNC, Method::VqDC, Method::VQ};
    return methods;
}

bool uses_codebook(Method m) { return m == Method::VqNC || m == Method::VqDC || m == Method::VQ; }

void RunConfig::validate() const {
    if (w == 0) throw ConfigError("w must be positive");
    if (codebook_size == 0) throw ConfigError("codebook_size must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must lie in (0, 1]");
    train.validate();
    BinningConfig{bins}.validate();
    KernelConfig{bandwidth}.validate();
    if (!(dc_l2 >= 0.0) || !std::isfinite(dc_l2)) throw ConfigError("dc_l2 must be finite and non-negative");
}

MetricsOptions RunConfig::metric_options() const {
    return MetricsOptions{BinningConfig{bins}, KernelConfig{bandwidth}, ess_bins, ecce_reduction};
}

json to_json(const RunConfig& c) {
    return {{"method", method_name(c.method)},
            {"w", c.w},
            {"codebook_size", c.codebook_size},
            {"decay", c.decay},
            {"train", to_json(c.train)},
            {"bins", c.bins},
            {"bandwidth", c.bandwidth},
            {"ess_bins", c.ess_bins},
            {"ecce_reduction", reduction_name(c.ecce_reduction)},
            {"learn_sigma", c.learn_sigma},
            {"strict_identity", c.strict_identity},
            {"cell_prior", c.cell_prior == CellPrior::Empirical ? "empirical" : "none"},
            {"dc_l2", c.dc_l2}};
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    static const char* known[] = {"method",   "w",           "codebook_size", "decay",           "train",
                                  "bins",     "bandwidth",   "ess_bins",      "ecce_reduction",  "learn_sigma",
                                  "strict_identity", "cell_prior", "dc_l2"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
            throw ConfigError("unknown run config key '" + key + "'");
        }
    }
    try {
        if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
        c.w = j.value("w", c.w);
        c.codebook_size = j.value("codebook_size", c.codebook_size);
        c.decay = j.value("decay", c.decay);
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
        c.bins = j.value("bins", c.bins);
        c.bandwidth = j.value("bandwidth", c.bandwidth);
        c.ess_bins = j.value("ess_bins", c.ess_bins);
        if (j.contains("ecce_reduction")) c.ecce_reduction = parse_reduction(j.at("ecce_reduction").get<std::string>());
        c.learn_sigma = j.value("learn_sigma", c.learn_sigma);
        c.strict_identity = j.value("strict_identity", c.strict_identity);
        if (j.contains("cell_prior")) c.cell_prior = parse_cell_prior(j.at("cell_prior").get<std::string>());
        c.dc_l2 = j.value("dc_l2", c.dc_l2);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config value: ") + e.what());
    }
    return c;
}

void check_config_for_dataset(const RunConfig& cfg, const CalibrationDataset& ds) {
    cfg.validate();
    const std::size_t n_train = ds.indices(Split::TrainCal).size();
    if (n_train == 0) throw ConfigError("dataset has no train_cal rows");
    if (ds.indices(Split::ValCal).empty()) throw ConfigError("dataset has no val_cal rows");
    if (uses_codebook(cfg.method)) {
        const auto seg = SegmentationConfig::for_embedding(ds.dim(), cfg.w);
        if (cfg.codebook_size > n_train * seg.w) {
            throw ConfigError("codebook_size " + std::to_string(cfg.codebook_size) + " exceeds the " +
                              std::to_string(n_train * seg.w) + " training slots available to seed it");
        }
    }
}

Stage1Result fit_stage1(const CalibrationDataset& ds, const RunConfig& cfg) {
    const auto seg = SegmentationConfig::for_embedding(ds.dim(), cfg.w);
    const CalibrationDataset train = ds.subset(Split::TrainCal);
    Rng rng(cfg.train.seed);
    Codebook cb = init_codebook(train.embeddings, seg, cfg.codebook_size, cfg.decay, rng);
    return train_stage1(ds, std::move(cb), LinearHead::zeros(ds.n_classes(), ds.dim()), seg, cfg.train);
}

FittedModel fit_model(const CalibrationDataset& ds, const RunConfig& cfg, const Stage1Result* stage1) {
    check_config_for_dataset(cfg, ds);
    FittedModel m;
    m.method = cfg.method;
    m.n_classes = ds.n_classes();
    const CalibrationDataset train = ds.subset(Split::TrainCal);
    const CalibrationDataset val = ds.subset(Split::ValCal);

    switch (cfg.method) {
        case Method::NC:
            return m;
        case Method::TS:
            m.temperature = fit_temperature(train.base_probs, train.labels);
            return m;
        case Method::DC: {
            auto fit = fit_dirichlet(train.base_probs, train.labels, val.base_probs, val.labels, cfg.dc_l2, cfg.train);
            m.dirichlet = std::move(fit.params);
            m.logs["dirichlet"] = to_json(fit.log);
            return m;
        }
        default:
            break;
    }

    m.seg = SegmentationConfig::for_embedding(ds.dim(), cfg.w);
    Stage1Result s1 = stage1 ? *stage1 : fit_stage1(ds, cfg);
    m.logs["stage1"] = to_json(s1.log);
    m.codebook = std::move(s1.codebook);
    m.head = std::move(s1.head);

    if (cfg.method == Method::VqDC) {
        const VqScores tr = vq_scores(train.embeddings, *m.codebook, *m.head, m.seg);
        const VqScores va = vq_scores(val.embeddings, *m.codebook, *m.head, m.seg);
        auto fit = fit_dirichlet(tr.probs, train.labels, va.probs, val.labels, cfg.dc_l2, cfg.train);
        m.dirichlet = std::move(fit.params);
        m.logs["dirichlet"] = to_json(fit.log);
    } else if (cfg.method == Method::VQ) {
        Rng rng(cfg.train.seed ^ kStage2Stream);
        CalibratorParams init = init_calibrator(cfg.codebook_size, ds.n_classes(), m.seg.w, rng, cfg.strict_identity);
        init.learn_sigma = cfg.learn_sigma;
        init.cell_prior_mode = cfg.cell_prior;
        auto s2 = train_stage2(ds, *m.codebook, *m.head, m.seg, std::move(init), cfg.train);
        m.calibrator = std::move(s2.params);
        m.logs["stage2"] = to_json(s2.log);
    }
    return m;
}

Tensor2D model_probs(const FittedModel& m, const CalibrationDataset& ds) {
    if (ds.n_classes() != m.n_classes) {
        throw ConfigError("model expects " + std::to_string(m.n_classes) + " classes, dataset has " +
                          std::to_string(ds.n_classes()));
    }
    switch (m.method) {
        case Method::NC:
            return nc(ds.base_probs);
        case Method::TS:
            return apply_temperature(ds.base_probs, *m.temperature);
        case Method::DC:
            return apply_dirichlet(ds.base_probs, *m.dirichlet);
        default:
            break;
    }
    if (ds.dim() != m.seg.m_prime) {
        throw ConfigError("model expects embeddings of dimension " + std::to_string(m.seg.m_prime) + ", dataset has " +
                          std::to_string(ds.dim()));
    }
    const VqScores scores = vq_scores(ds.embeddings, *m.codebook, *m.head, m.seg);
    if (m.method == Method::VqNC) return scores.probs;
    if (m.method == Method::VqDC) return apply_dirichlet(scores.probs, *m.dirichlet);
    return calibrate_scores(scores, *m.calibrator);
}

void save_model(const fs::path& dir, const FittedModel& m) {
    fs::create_directories(dir);
    if (m.codebook) save_codebook(dir, *m.codebook, m.seg);
    if (m.head) save_head(dir, *m.head);
    if (m.calibrator) save_calibrator(dir, *m.calibrator);
    if (m.temperature) save_temperature(dir, *m.temperature);
    if (m.dirichlet) save_dirichlet(dir, *m.dirichlet);
    write_json(dir / "model.json", {{"method", method_name(m.method)}, {"n_classes", m.n_classes}});
    write_json(dir / "training_log.json", m.logs);
}

FittedModel load_model(const fs::path& dir) {
    const json meta = read_json(dir / "model.json");
    FittedModel m;
    try {
        m.method = parse_method(meta.at("method").get<std::string>());
        m.n_classes = meta.at("n_classes").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError((dir / "model.json").string() + ": " + e.what());
    }
    if (uses_codebook(m.method)) {
        m.codebook = load_codebook(dir, m.seg);
        m.head = load_head(dir);
        if (m.head->n_classes() != m.n_classes || m.head->input_dim() != m.seg.m_prime) {
            throw FormatError(dir.string() + ": head shape does not match codebook and class count");
        }
    }
    if (m.method == Method::TS) m.temperature = load_temperature(dir);
    if (m.method == Method::DC || m.method == Method::VqDC) m.dirichlet = load_dirichlet(dir);
    if (m.method == Method::VQ) {
        m.calibrator = load_calibrator(dir);
        if (m.calibrator->codebook_size() != m.codebook->size() || m.calibrator->slots() != m.seg.w ||
            m.calibrator->n_classes() != m.n_classes) {
            throw FormatError(dir.string() + ": calibrator shape does not match codebook");
        }
    }
    if (fs::exists(dir / "training_log.json")) m.logs = read_json(dir / "training_log.json");
    return m;
}

EvalResult evaluate_model(const FittedModel& m, const CalibrationDataset& ds, const RunConfig& cfg) {
    cfg.validate();
    const CalibrationDataset test = ds.subset(Split::Test);
    if (test.size() == 0) throw ConfigError("dataset has no test rows");
    EvalResult r;
    r.method = m.method;
    r.seed = cfg.train.seed;
    const Tensor2D probs = model_probs(m, test);
    r.metrics = evaluate(probs, test.labels, test.embeddings, cfg.metric_options());
    if (m.codebook) {
        r.w = m.seg.w;
        r.codebook_size = m.codebook->size();
        r.usage = usage_stats(assign_rows(test.embeddings, m.seg, *m.codebook).idx, m.codebook->size());
    }
    return r;
}

json to_json(const EvalResult& r) {
    json j = {{"method", method_name(r.method)},
              {"seed", r.seed},
              {"w", r.w},
              {"codebook_size", r.codebook_size},
              {"metrics", to_json(r.metrics)}};
    if (r.usage) {
        j["usage"] = {{"min", r.usage->min}, {"max", r.usage->max}, {"std", r.usage->std}, {"counts", r.usage->counts}};
    }
    return j;
}

std::string csv_header() {
    return "method,seed,w,codebook_size,lce,mlce,ecce,ece,classwise_ece,nll,acc,usage_min,usage_max,usage_std";
}

std::string csv_row(const EvalResult& r) {
    std::ostringstream out;
    out.precision(10);
    out << method_name(r.method) << ',' << r.seed << ',';
    if (r.usage) {
        out << r.w << ',' << r.codebook_size;
    } else {
        out << ',';
    }
    const auto& m = r.metrics;
    out << ',' << m.lce << ',' << m.mlce << ',' << m.ecce << ',' << m.ece << ',' << m.classwise_ece << ',' << m.nll
        << ',' << m.acc << ',';
    if (r.usage) out << r.usage->min << ',' << r.usage->max << ',' << r.usage->std;
    else out << ",,";
    return out.str();
}

std::vector<EvalResult> ablate(const CalibrationDataset& ds, const RunConfig& cfg, const std::vector<std::size_t>& ws,
                               const std::vector<std::size_t>& sizes) {
    if (ws.empty() || sizes.empty()) throw ConfigError("ablation grid must list at least one w and one codebook size");
    if (!uses_codebook(cfg.method)) throw ConfigError("ablation needs a VQ method (vq, vq-nc or vq-dc)");
    // validate the whole grid before fitting anything
    for (std::size_t w : ws) {
        for (std::size_t c : sizes) {
            RunConfig point = cfg;
            point.w = w;
            point.codebook_size = c;
            check_config_for_dataset(point, ds);
        }
    }
    std::vector<EvalResult> rows;
    for (std::size_t w : ws) {
        for (std::size_t c : sizes) {
            RunConfig point = cfg;
            point.w = w;
            point.codebook_size = c;
            rows.push_back(evaluate_model(fit_model(ds, point), ds, point));
        }
    }
    return rows;
}

}  // namespace vqcal
