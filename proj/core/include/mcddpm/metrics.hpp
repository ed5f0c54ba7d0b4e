#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcddpm/postprocess.hpp"
#include "mcddpm/volume.hpp"

namespace mcddpm {

/// Dice overlap 2|A.B| / (|A|+|B|). Both masks empty -> 1.0, exactly one
/// empty -> 0.0.
double dice(const BinaryMap& pred, const BinaryMap& truth);

/// Flat-vector variants used for pooled (cross-volume) evaluation.
double dice_flat(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth);

/// Area under the precision-recall curve over all score thresholds, with the
/// piecewise-constant (average-precision) step convention: AP = sum over
/// distinct descending score values tau of (R(tau) - R_prev) * P(tau), where a
/// voxel is predicted positive when score >= tau. Throws metric_error when
/// truth has no positives.
double auprc_flat(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth);

double auprc(const AnomalyMap& scores, const BinaryMap& truth);

/// Mean absolute per-voxel residual over brain-mask voxels (v > 0).
double reconstruction_error(const Volume& v, const Volume& v_hat);

/// One evaluated dataset row. Percent-scaled dice/auprc live in the report
/// writer; values here are raw fractions in [0, 1].
struct EvalRow {
    std::string dataset;
    std::optional<double> dice_pooled;
    std::optional<double> dice_mean;
    std::optional<double> auprc_pooled;
    std::optional<double> auprc_mean;   // secondary; text table only
    std::optional<double> recon_error;  // healthy volumes
    float theta = 0.2f;
    int p_norm = 2;
    std::string checkpoint_id;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    /// Comma-separated rows, columns:
    /// dataset,dice_pooled,dice_mean,auprc,recon_error,theta,p,checkpoint
    std::string to_csv() const;
    /// Human-readable aligned table (includes the secondary auprc_mean).
    std::string to_table() const;
};

}  // namespace mcddpm
