#pragma once

#include <cstdint>

#include "mcddpm/model.hpp"
#include "mcddpm/postprocess.hpp"
#include "mcddpm/schedule.hpp"
#include "mcddpm/volume.hpp"

namespace mcddpm {

struct InferenceConfig {
    int t_test = 500;
    std::uint64_t seed = 0;
    bool independent_latent_noise = false;  // separate noising draw feeds the latent branch
    int repeats = 1;                        // reconstructions averaged per slice
};

/// Healthy-image estimate for one slice: noise to t_test, one denoiser pass
/// predicting the clean image directly (no iterative chain). The noise draw
/// is derived from (seed, slice_index) so volume reconstruction is
/// reproducible and order-independent.
Tensor<float> reconstruct_slice(const ModelF& model, const NoiseSchedule& schedule,
                                const Tensor<float>& x, const InferenceConfig& cfg,
                                std::uint64_t slice_index = 0);

/// Slice-wise volume reconstruction; slices are independent and may run
/// concurrently.
Volume reconstruct_volume(const ModelF& model, const NoiseSchedule& schedule, const Volume& v,
                          const InferenceConfig& cfg);

/// Elementwise residual magnitudes: |v - v_hat| for p = 1, squared for p = 2.
AnomalyMap residual_map(const Volume& v, const Volume& v_hat, int p);

}  // namespace mcddpm
