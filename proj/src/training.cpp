#include "vqcal/training.hpp"

#include "vqcal/errors.hpp"
#include "vqcal/numerics.hpp"
#include "vqcal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace vqcal {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (patience == 0) throw ConfigError("patience must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

json to_json(const TrainConfig& cfg) {
    return json{{"max_epochs", cfg.max_epochs}, {"batch_size", cfg.batch_size}, {"patience", cfg.patience},
                {"lr", cfg.lr},                 {"weight_decay", cfg.weight_decay}, {"adam_beta1", cfg.adam_beta1},
                {"adam_beta2", cfg.adam_beta2}, {"adam_eps", cfg.adam_eps},         {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig d) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    static const std::set<std::string> known{"max_epochs", "batch_size", "patience",   "lr",  "weight_decay",
                                             "adam_beta1", "adam_beta2", "adam_eps", "seed"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
    }
    d.max_epochs = j.value("max_epochs", d.max_epochs);
    d.batch_size = j.value("batch_size", d.batch_size);
    d.patience = j.value("patience", d.patience);
    d.lr = j.value("lr", d.lr);
    d.weight_decay = j.value("weight_decay", d.weight_decay);
    d.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    d.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    d.adam_eps = j.value("adam_eps", d.adam_eps);
    d.seed = j.value("seed", d.seed);
    return d;
}

json to_json(const TrainingLog& log) {
    json epochs = json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_nll", e.val_nll},
                          {"best_val_nll", e.best_val_nll}});
    }
    return json{{"epochs", epochs},
                {"best_epoch", log.best_epoch},
                {"best_val_nll", log.best_val_nll},
                {"initial_val_nll", log.initial_val_nll},
                {"stopped_early", log.stopped_early}};
}

bool EarlyStopper::observe(double val) {
    if (val < best_) {
        best_ = val;
        bad_epochs_ = 0;
        return true;
    }
    ++bad_epochs_;
    return false;
}

TrainingLog train_minibatch(std::vector<double>& params, std::span<const std::uint8_t> decay_mask,
                            const MinibatchProblem& problem, const TrainConfig& cfg) {
    cfg.validate();
    if (problem.n_train == 0) throw ConfigError("training split is empty");
    TrainingLog log;
    log.initial_val_nll = problem.val_loss(params);
    log.best_val_nll = log.initial_val_nll;
    if (!std::isfinite(log.initial_val_nll)) throw NumericalError("non-finite validation loss at initialization");

    EarlyStopper stopper(cfg.patience);
    stopper.observe(log.initial_val_nll);
    if (problem.on_new_best) problem.on_new_best();
    std::vector<double> best = params;
    std::vector<double> grad(params.size());
    AdamState adam(params.size(), cfg.lr, cfg.weight_decay);
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    Rng rng(cfg.seed);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto order = rng.permutation(problem.n_train);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            const double loss = problem.loss_grad(batch, params, grad);
            if (!std::isfinite(loss)) throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
            adam_step(adam, params, grad, decay_mask);
            if (problem.after_step) problem.after_step(batch);
            loss_sum += loss;
            ++n_batches;
        }
        const double val = problem.val_loss(params);
        if (!std::isfinite(val)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
        if (stopper.observe(val)) {
            best = params;
            log.best_epoch = epoch;
            if (problem.on_new_best) problem.on_new_best();
        }
        log.epochs.push_back({epoch, loss_sum / static_cast<double>(n_batches), val, stopper.best()});
        if (stopper.should_stop()) {
            log.stopped_early = true;
            break;
        }
    }
    log.best_val_nll = stopper.best();
    params = std::move(best);
    return log;
}

}  // namespace vqcal
