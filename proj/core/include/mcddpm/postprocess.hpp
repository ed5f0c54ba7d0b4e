#pragma once

#include "mcddpm/volume.hpp"

namespace mcddpm {

/// Per-voxel residual magnitudes (|v - vhat| for p=1, squared for p=2).
struct AnomalyMap {
    Volume data;
    int p_norm = 2;
};

/// 3D median filter with a kernel^3 neighborhood and zero padding at the
/// borders. Kernel must be odd; kernel = 1 is the identity.
Volume median_filter_3d(const Volume& m, int kernel);

inline AnomalyMap median_filter_3d(const AnomalyMap& m, int kernel) {
    return AnomalyMap{median_filter_3d(m.data, kernel), m.p_norm};
}

/// Binarizes the input volume: 1 where v > 0.
BinaryMap brain_mask(const Volume& v);

/// Iterated morphological erosion with the 6-connected (face-adjacent)
/// structuring element. Voxels outside the volume count as background.
BinaryMap erode(const BinaryMap& mask, int iterations);

/// Output = 1 where (m > theta) and mask = 1. The caller passes the already
/// eroded brain mask.
BinaryMap threshold_binarize(const Volume& m, const BinaryMap& mask, float theta);

inline BinaryMap threshold_binarize(const AnomalyMap& m, const BinaryMap& mask, float theta) {
    return threshold_binarize(m.data, mask, theta);
}

struct PostprocessParams {
    int median_kernel = 5;
    int erosion_iterations = 3;
    float theta = 0.2f;
};

struct PostprocessResult {
    AnomalyMap filtered;   // median-filtered residual map
    BinaryMap eval_mask;   // eroded brain mask
    BinaryMap segmentation;
};

/// Full chain: median filter -> erode(brain_mask(input volume)) -> threshold.
PostprocessResult postprocess_anomaly_map(const AnomalyMap& residual, const Volume& input,
                                          const PostprocessParams& params);

}  // namespace mcddpm
