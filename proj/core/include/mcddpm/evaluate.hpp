#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcddpm/data_io.hpp"
#include "mcddpm/inference.hpp"
#include "mcddpm/metrics.hpp"
#include "mcddpm/postprocess.hpp"

namespace mcddpm {

struct EvalConfig {
    InferenceConfig inference;
    PostprocessParams post;
    int p_norm = 2;
};

struct VolumeEval {
    std::string subject_id;
    std::optional<double> dice;    // volumes with positive ground truth in-mask
    std::optional<double> auprc;
    std::optional<double> recon_error;  // healthy volumes
    Volume reconstruction;              // populated when keep_volumes
    AnomalyMap filtered;
    BinaryMap segmentation;
    BinaryMap eval_mask;
};

struct DatasetEval {
    EvalRow row;
    std::vector<VolumeEval> volumes;
};

/// Full protocol per volume: reconstruct slice-wise, residual map, median
/// filter, eroded brain mask, threshold. Dice/AUPRC pool voxels inside the
/// eroded mask across all volumes (healthy volumes contribute negatives);
/// per-volume means average over volumes whose masked ground truth is
/// nonempty. Reconstruction error averages over healthy volumes.
DatasetEval evaluate_dataset(const ModelF& model, const NoiseSchedule& schedule,
                             const std::vector<const VolumeRecord*>& records,
                             const EvalConfig& cfg, const std::string& dataset_name,
                             const std::string& checkpoint_id, bool keep_volumes = false);

}  // namespace mcddpm
