#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "mcddpm/model.hpp"
#include "mcddpm/nn/params.hpp"
#include "mcddpm/schedule.hpp"

namespace mcddpm {

/// Checkpoint sidecar metadata. The binary container is self-describing:
/// magic, version, JSON header (config snapshot, schedule endpoints, epoch,
/// named array index with shapes/offsets), then one float32 little-endian
/// payload blob.
struct CheckpointMeta {
    ModelConfig model;
    std::string config_snapshot;  // flat key=value text of the originating run
    int epoch = 0;
    double val_error = -1.0;
    int T = 1000;
    double beta_start = kBetaStart;
    double beta_end = kBetaEnd;
};

void save_checkpoint(const std::filesystem::path& path, const ModelF& model,
                     const CheckpointMeta& meta, const nn::Adam<float>* adam = nullptr);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<ModelF> model;
    std::unique_ptr<nn::Adam<float>> adam;  // null when the file has no optimizer state
};

/// Rebuilds the model from the stored configuration and restores every
/// parameter bitwise. Throws checkpoint_error on structural problems.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies a parameter snapshot (store-entry order) into a model.
void apply_params(ModelF& model, const std::vector<Tensor<float>>& params);

}  // namespace mcddpm
