#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <limits>
#include <vector>

#include <json.hpp>

namespace vqcal {

/// Minibatch Adam schedule with early stopping on validation NLL.
struct TrainConfig {
    std::size_t max_epochs = 200;
    std::size_t batch_size = 1024;
    std::size_t patience = 10;
    double lr = 1e-3;
    double weight_decay = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_nll = 0.0;
    double best_val_nll = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_nll = 0.0;
    double initial_val_nll = 0.0;
    bool stopped_early = false;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});
nlohmann::json to_json(const TrainingLog& log);

/// Tracks the best validation loss and when to stop.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    /// Returns true when `val` is a new best.
    bool observe(double val);
    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t bad_epochs_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

/// A differentiable objective over a flat parameter vector, optimised in
/// shuffled minibatches.
struct MinibatchProblem {
    std::size_t n_train = 0;
    /// Mean loss over `batch`; writes the gradient into `grad` (already sized).
    std::function<double(std::span<const std::size_t> batch, std::span<const double> params, std::span<double> grad)>
        loss_grad;
    std::function<double(std::span<const double> params)> val_loss;
    /// Runs after each optimizer step (e.g. codebook EMA).
    std::function<void(std::span<const std::size_t> batch)> after_step;
    /// Runs whenever a new best validation loss is recorded, to snapshot extra state.
    std::function<void()> on_new_best;
};

/// Adam with decoupled weight decay over shuffled minibatches. The starting
/// point counts as epoch 0; `params` is left at the best validation loss seen.
TrainingLog train_minibatch(std::vector<double>& params, std::span<const std::uint8_t> decay_mask,
                            const MinibatchProblem& problem, const TrainConfig& cfg);

}  // namespace vqcal
