#pragma once

#include "mcddpm/volume.hpp"

namespace mcddpm {

struct NormalizeResult {
    Volume volume;
    bool constant_input = false;  // warning flag: input had no dynamic range
};

/// Affinely maps the lo-th percentile of the nonzero voxels to 0 and the
/// hi-th to 1, then clips to [0, 1]. Percentiles use linear interpolation on
/// the sorted nonzero values. A constant input returns all-zeros with the
/// warning flag set.
NormalizeResult normalize_percentile(const Volume& v, double lo, double hi);

struct PreprocessParams {
    int trim_slices = 15;  // removed from top and bottom after downsampling
    double percentile_lo = 1.0;
    double percentile_hi = 99.0;
};

/// Array-level preprocessing for registered, skull-stripped volumes:
/// tight nonzero bounding box crop, 2x2x2 mean-pool downsampling, transverse
/// trim of `trim_slices` per side, percentile normalization.
Volume preprocess_volume(const Volume& v, const PreprocessParams& params = {});

}  // namespace mcddpm
