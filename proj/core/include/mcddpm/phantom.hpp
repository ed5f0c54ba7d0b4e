#pragma once

#include <cstdint>
#include <vector>

#include "mcddpm/data_io.hpp"

namespace mcddpm {

/// Synthetic brain-like dataset with exactly-known anomaly masks, used for
/// desk-scale end-to-end verification. Healthy volumes are nested-ellipsoid
/// "tissue" with mild per-sample deformation and noise; unhealthy test
/// volumes add hyperintense blobs recorded voxel-exactly in the ground truth.
struct PhantomSpec {
    int h = 64, w = 64, d = 24;

    int train_volumes = 20;
    int val_volumes = 4;        // healthy, for checkpoint selection
    int test_volumes = 8;
    int test_healthy = 2;       // healthy volumes within the test split

    // healthy texture
    float base_intensity = 0.30f;
    float intensity_jitter = 0.05f;
    float noise_sigma = 0.01f;

    // anomalies (test split only)
    int anomalies_min = 1, anomalies_max = 3;
    double radius_min = 3.5, radius_max = 6.0;      // in-plane semi-axes (voxels)
    double radius_z_min = 2.5, radius_z_max = 4.5;  // transverse semi-axis
    double offset_min = 0.55, offset_max = 0.75;    // added intensity
    double prevalence_min = 0.02, prevalence_max = 0.05;  // fraction of brain voxels

    std::uint64_t seed = 1234;
};

std::vector<VolumeRecord> generate_phantom_dataset(const PhantomSpec& spec);

/// Fraction of brain voxels (v > 0) marked anomalous, pooled over records
/// that carry ground truth.
double anomaly_prevalence(const std::vector<VolumeRecord>& records);

}  // namespace mcddpm
