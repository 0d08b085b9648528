// vqcal: synthesize data, fit calibrators, evaluate, ablate and verify.
// Exit codes: 0 ok, 2 bad configuration or input, 3 numerical failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vqcal/artifacts.hpp"
#include "vqcal/dataio.hpp"
#include "vqcal/errors.hpp"
#include "vqcal/parallel.hpp"
#include "vqcal/pipeline.hpp"
#include "vqcal/rate_experiment.hpp"
#include "vqcal/synthetic.hpp"
#include "vqcal/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vqcal;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct FitFlags {
    std::string config_path;
    std::string method, cell_prior, ecce_reduction;
    std::size_t w = 0, codebook_size = 0, batch_size = 0, patience = 0, max_epochs = 0, bins = 0, ess_bins = 0;
    double decay = 0, lr = 0, weight_decay = 0, bandwidth = 0, dc_l2 = 0;
    std::uint64_t seed = 0;
    bool learn_sigma = false, strict_identity = false;
    std::vector<CLI::Option*> opts;
    CLI::Option *o_method{}, *o_w{}, *o_c{}, *o_decay{}, *o_lr{}, *o_wd{}, *o_bs{}, *o_pat{}, *o_epochs{}, *o_seed{},
        *o_bins{}, *o_bw{}, *o_ess{}, *o_red{}, *o_ls{}, *o_si{}, *o_cp{}, *o_l2{};
};

void add_fit_flags(CLI::App* cmd, FitFlags& f, bool training) {
    cmd->add_option("--config", f.config_path, "JSON run config; flags override its values")->check(CLI::ExistingFile);
    if (training) {
        f.o_method = cmd->add_option("--method", f.method, "nc, ts, dc, vq-nc, vq-dc or vq");
        f.o_w = cmd->add_option("--w", f.w, "number of slots");
        f.o_c = cmd->add_option("--codebook-size", f.codebook_size, "codewords in the shared codebook");
        f.o_decay = cmd->add_option("--decay", f.decay, "EMA decay of the codebook");
        f.o_lr = cmd->add_option("--lr", f.lr, "Adam learning rate");
        f.o_wd = cmd->add_option("--weight-decay", f.weight_decay, "decoupled weight decay");
        f.o_bs = cmd->add_option("--batch-size", f.batch_size);
        f.o_pat = cmd->add_option("--patience", f.patience, "epochs without validation improvement before stopping");
        f.o_epochs = cmd->add_option("--max-epochs", f.max_epochs);
        f.o_seed = cmd->add_option("--seed", f.seed);
        f.o_ls = cmd->add_flag("--learn-sigma", f.learn_sigma, "learn the slot scales");
        f.o_si = cmd->add_flag("--strict-identity", f.strict_identity, "zero-initialise B so the calibrator starts at the identity");
        f.o_cp = cmd->add_option("--cell-prior", f.cell_prior, "none or empirical");
        f.o_l2 = cmd->add_option("--dc-l2", f.dc_l2, "Dirichlet baseline regularisation");
    }
    f.o_bins = cmd->add_option("--bins", f.bins, "confidence bins for ECE-style metrics");
    f.o_bw = cmd->add_option("--bandwidth", f.bandwidth, "RBF kernel bandwidth for LCE/MLCE");
    f.o_ess = cmd->add_option("--ess-bins", f.ess_bins, "quantile bins of the ESS curve");
    f.o_red = cmd->add_option("--ecce-reduction", f.ecce_reduction, "mean or max over classes");
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

RunConfig resolve_config(const FitFlags& f, RunConfig base) {
    RunConfig c = f.config_path.empty() ? base : run_config_from_json(read_json(f.config_path), base);
    json overrides = json::object();
    json train = json::object();
    if (given(f.o_method)) overrides["method"] = f.method;
    if (given(f.o_w)) overrides["w"] = f.w;
    if (given(f.o_c)) overrides["codebook_size"] = f.codebook_size;
    if (given(f.o_decay)) overrides["decay"] = f.decay;
    if (given(f.o_lr)) train["lr"] = f.lr;
    if (given(f.o_wd)) train["weight_decay"] = f.weight_decay;
    if (given(f.o_bs)) train["batch_size"] = f.batch_size;
    if (given(f.o_pat)) train["patience"] = f.patience;
    if (given(f.o_epochs)) train["max_epochs"] = f.max_epochs;
    if (given(f.o_seed)) train["seed"] = f.seed;
    if (!train.empty()) overrides["train"] = train;
    if (given(f.o_bins)) overrides["bins"] = f.bins;
    if (given(f.o_bw)) overrides["bandwidth"] = f.bandwidth;
    if (given(f.o_ess)) overrides["ess_bins"] = f.ess_bins;
    if (given(f.o_red)) overrides["ecce_reduction"] = f.ecce_reduction;
    if (given(f.o_ls)) overrides["learn_sigma"] = f.learn_sigma;
    if (given(f.o_si)) overrides["strict_identity"] = f.strict_identity;
    if (given(f.o_cp)) overrides["cell_prior"] = f.cell_prior;
    if (given(f.o_l2)) overrides["dc_l2"] = f.dc_l2;
    c = run_config_from_json(overrides, c);
    c.validate();
    return c;
}

std::vector<std::size_t> parse_list(const std::string& s, const char* what) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(item, &pos);
            if (pos != item.size() || v <= 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": '" + item + "' is not a positive integer");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " is empty");
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
}

json run_record(const std::string& command, const json& config, const json& paths) {
    return {{"command", command}, {"threads", num_threads()}, {"config", config}, {"paths", paths}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-aware calibration with vector-quantized embeddings"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "worker threads (1 gives bitwise reproducible output)")
        ->check(CLI::PositiveNumber);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic region-miscalibration dataset");
    std::string spec_path, preset, synth_out;
    std::uint64_t synth_seed = 0;
    auto* spec_opt = synth->add_option("--spec", spec_path, "JSON dataset spec")->check(CLI::ExistingFile);
    auto* preset_opt = synth->add_option("--preset", preset, "built-in spec: benchmark")->excludes(spec_opt);
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "overrides the spec's seed");
    synth->add_option("--out", synth_out, "output dataset directory")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "fit a calibration method on train_cal/val_cal");
    std::string fit_data, fit_out;
    FitFlags fit_flags;
    fit->add_option("--data", fit_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    fit->add_option("--out", fit_out, "artifact directory")->required();
    add_fit_flags(fit, fit_flags, true);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate fitted artifacts on the test split");
    std::string eval_data, eval_model, eval_out;
    FitFlags eval_flags;
    eval->add_option("--data", eval_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--model", eval_model, "artifact directory from fit")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--out", eval_out, "report directory (defaults to the artifact directory)");
    add_fit_flags(eval, eval_flags, false);

    // ablate
    auto* abl = app.add_subcommand("ablate", "fit and evaluate over a grid of slot counts and codebook sizes");
    std::string abl_data, abl_out, grid_w = "16,32,64", grid_c = "16,32,64";
    FitFlags abl_flags;
    abl->add_option("--data", abl_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    abl->add_option("--out", abl_out, "report directory")->required();
    abl->add_option("--grid-w", grid_w, "comma-separated slot counts")->capture_default_str();
    abl->add_option("--grid-c", grid_c, "comma-separated codebook sizes")->capture_default_str();
    add_fit_flags(abl, abl_flags, true);

    // verify
    auto* ver = app.add_subcommand("verify", "run the exact-oracle and gradient suites");
    std::uint64_t verify_seed = 2024;
    std::string verify_out;
    bool with_rate = false;
    ver->add_option("--seed", verify_seed);
    ver->add_option("--out", verify_out, "write verify.json here");
    ver->add_flag("--rate", with_rate, "also run the slow occurrence-count rate experiment (warning only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        set_num_threads(threads);

        if (*synth) {
            SyntheticSpec spec;
            if (given(spec_opt)) {
                try {
                    spec = synthetic_spec_from_json(read_json(spec_path));
                } catch (const FormatError& e) {
                    throw ConfigError(std::string("cannot parse spec: ") + e.what());
                }
            } else if (preset == "benchmark") {
                spec = benchmark_spec(0);
            } else if (given(preset_opt)) {
                throw ConfigError("unknown preset '" + preset + "' (expected benchmark)");
            } else {
                throw ConfigError("synth needs --spec or --preset");
            }
            if (given(synth_seed_opt)) spec.seed = synth_seed;
            spec.validate();
            const CalibrationDataset ds = make_synthetic(spec);
            save_dataset(synth_out, ds);
            write_json(fs::path(synth_out) / "spec.json", to_json(spec));
            write_json(fs::path(synth_out) / "run.json", run_record("synth", to_json(spec), {{"out", synth_out}}));
            std::cout << "wrote " << ds.size() << " rows to " << synth_out << '\n';
            return 0;
        }

        if (*fit) {
            const RunConfig cfg = resolve_config(fit_flags, RunConfig{});
            const CalibrationDataset ds = load_dataset(fit_data);
            check_config_for_dataset(cfg, ds);
            const FittedModel model = fit_model(ds, cfg);
            save_model(fit_out, model);
            write_json(fs::path(fit_out) / "run.json",
                       run_record("fit", to_json(cfg), {{"data", fit_data}, {"out", fit_out}}));
            std::cout << "fitted " << method_name(cfg.method) << " into " << fit_out << '\n';
            return 0;
        }

        if (*eval) {
            // the fit run's resolved config supplies the defaults (seed, method)
            RunConfig base;
            const fs::path fit_run = fs::path(eval_model) / "run.json";
            if (fs::exists(fit_run)) {
                const json rec = read_json(fit_run);
                if (rec.contains("config")) base = run_config_from_json(rec.at("config"));
            }
            RunConfig cfg = resolve_config(eval_flags, base);
            const FittedModel model = load_model(eval_model);
            cfg.method = model.method;
            const CalibrationDataset ds = load_dataset(eval_data);
            const EvalResult r = evaluate_model(model, ds, cfg);
            const fs::path out = eval_out.empty() ? fs::path(eval_model) : fs::path(eval_out);
            fs::create_directories(out);
            write_json(out / "metrics.json", to_json(r));
            write_text(out / "metrics.csv", csv_header() + "\n" + csv_row(r) + "\n");
            write_json(out / "run.json", run_record("eval", to_json(cfg),
                                                    {{"data", eval_data}, {"model", eval_model}, {"out", out.string()}}));
            std::cout << csv_header() << '\n' << csv_row(r) << '\n';
            return 0;
        }

        if (*abl) {
            const RunConfig cfg = resolve_config(abl_flags, RunConfig{});
            const auto ws = parse_list(grid_w, "--grid-w");
            const auto cs = parse_list(grid_c, "--grid-c");
            const CalibrationDataset ds = load_dataset(abl_data);
            const auto rows = ablate(ds, cfg, ws, cs);
            fs::create_directories(abl_out);
            std::string csv = csv_header() + "\n";
            for (const auto& r : rows) csv += csv_row(r) + "\n";
            write_text(fs::path(abl_out) / "ablation.csv", csv);
            json cfg_json = to_json(cfg);
            cfg_json["grid_w"] = ws;
            cfg_json["grid_codebook_size"] = cs;
            write_json(fs::path(abl_out) / "run.json",
                       run_record("ablate", cfg_json, {{"data", abl_data}, {"out", abl_out}}));
            std::cout << csv;
            return 0;
        }

        if (*ver) {
            const VerifyReport report = run_verify(verify_seed);
            json j = to_json(report);
            for (const auto& c : report.checks) {
                std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << ": " << c.value << '\n';
            }
            if (with_rate) {
                const RateResult rate = run_rate_experiment(RateConfig{});
                const bool ok = rate.slope >= -0.75 && rate.slope <= -0.25;
                std::cout << (ok ? "PASS " : "WARN ") << "occurrence_count_rate  log-log slope " << rate.slope
                          << " (expected within [-0.75, -0.25])\n";
                j["rate"] = to_json(rate);
                j["rate"]["within_range"] = ok;
            }
            if (!verify_out.empty()) {
                fs::create_directories(verify_out);
                write_json(fs::path(verify_out) / "verify.json", j);
                write_json(fs::path(verify_out) / "run.json",
                           run_record("verify", {{"seed", verify_seed}, {"rate", with_rate}}, {{"out", verify_out}}));
            }
            return report.all_passed() ? 0 : kExitNumerical;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "unexpected failure: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
