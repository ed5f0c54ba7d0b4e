#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mcddpm/data_io.hpp"
#include "mcddpm/model.hpp"
#include "mcddpm/nn/params.hpp"
#include "mcddpm/schedule.hpp"

namespace mcddpm {

struct TrainConfig {
    int T = 1000;
    double lr = 1e-5;
    int batch_size = 8;
    int max_epochs = 1600;
    double lambda = 0.5;
    int p_norm = 2;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = end only
    int validate_every = 1;
    int t_test = 500;  // used for validation reconstructions
    std::vector<std::pair<int, int>> patch_sizes = {{48, 48}};
    bool xz_at_max_t = false;          // corrupt X^z at t = T instead of the sampled t
    bool stop_context_gradient = false;
    bool independent_latent_noise = false;  // inference-side convention, carried in snapshots
    int repeats = 1;                        // inference-side convention
    int threads = 0;                        // 0 = one per batch sample, capped by hardware

    void validate() const;
};

/// || x0_hat - x0 ||_p + lambda * || xz_hat - x0 ||_p with per-pixel mean
/// reduction (mean absolute difference for p=1, mean squared difference for
/// p=2), so lambda transfers across resolutions.
template <typename S>
S dual_loss(const Tensor<S>& x0, const Tensor<S>& x0_hat, const Tensor<S>& xz_hat, S lambda,
            int p);

struct StepStats {
    double loss = 0.0;
    double recon_term = 0.0;
    double bridge_term = 0.0;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_error = -1.0;  // negative = not computed this epoch
};

std::string metrics_to_csv(const std::vector<EpochRow>& rows);

struct FitResult {
    std::vector<EpochRow> metrics;
    int best_epoch = -1;
    double best_val_error = -1.0;
    double final_val_error = -1.0;
    std::vector<Tensor<float>> best_params;  // store-entry order
};

/// Owns the optimization loop over a model; forward passes flow through the
/// model's graph builders. Single-writer over parameters.
class Trainer {
public:
    Trainer(ModelF& model, TrainConfig cfg);

    /// One optimizer step on a batch of clean slices (all same shape).
    /// Per-sample randomness (t, patch placement, noise) is drawn from the
    /// trainer's stream before any parallel work, so results do not depend on
    /// thread count.
    StepStats training_step(const std::vector<Tensor<float>>& batch);

    /// Runs epochs over the train split (one uniformly-sampled slice per
    /// volume per epoch), tracks validation reconstruction error on the val
    /// split, returns the best checkpoint's parameters.
    /// per_epoch, when set, is invoked after each epoch row is finalized.
    /// first_epoch > 1 continues a resumed run (epoch seeds derive from the
    /// epoch number, so the schedule picks up where it left off).
    FitResult fit(const std::vector<VolumeRecord>& dataset,
                  const std::function<void(const EpochRow&)>& per_epoch = nullptr,
                  int first_epoch = 1);

    const NoiseSchedule& schedule() const { return schedule_; }
    nn::Adam<float>& optimizer() { return adam_; }
    ModelF& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    long steps_taken() const { return steps_; }

private:
    StepStats step_impl(const std::vector<const Tensor<float>*>& batch);
    double validate(const std::vector<const VolumeRecord*>& val_records);

    ModelF& model_;
    TrainConfig cfg_;
    NoiseSchedule schedule_;
    nn::Adam<float> adam_;
    RandomStream rng_;
    long steps_ = 0;
};

}  // namespace mcddpm
