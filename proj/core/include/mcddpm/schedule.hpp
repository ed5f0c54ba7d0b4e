#pragma once

#include <cstdint>
#include <vector>

#include "mcddpm/random.hpp"
#include "mcddpm/tensor.hpp"

namespace mcddpm {

/// Variance schedule tables for the closed-form forward process.
/// Time steps are 1-based: betas[t-1] is the variance at step t; a virtual
/// t = 0 denotes the clean image with alpha_bar(0) == 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // beta_t,      t = 1..T
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{i<=t} alpha_i

    double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
    double alpha(int t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
    double alpha_bar(int t) const {
        return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
    }
};

constexpr double kBetaStart = 1e-4;
constexpr double kBetaEnd = 2e-2;

/// Linear beta schedule with endpoint-exact interpolation from 1e-4 to 2e-2.
NoiseSchedule make_linear_schedule(int T);

/// Axis-aligned rectangular patch mask inside an h x w slice.
struct PatchMask {
    int h = 0, w = 0;
    int patch_h = 0, patch_w = 0;
    int row0 = 0, col0 = 0;
    std::vector<std::uint8_t> mask;  // h*w entries in {0,1}

    bool inside(int r, int c) const {
        return r >= row0 && r < row0 + patch_h && c >= col0 && c < col0 + patch_w;
    }
    std::size_t sum() const {
        std::size_t s = 0;
        for (auto v : mask) s += v;
        return s;
    }
};

/// Uniformly places a patch_h x patch_w rectangle inside an h x w slice.
PatchMask sample_patch_mask(int h, int w, int patch_h, int patch_w, RandomStream& rng);

namespace detail {
inline void check_q_sample_args(int t, int T) {
    if (t < 1 || t > T) throw std::invalid_argument("q_sample: t out of range [1, T]");
}
}  // namespace detail

/// Closed-form forward process: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise.
/// The Gaussian draw is caller-supplied so tests can inject fixed noise.
template <typename S>
Tensor<S> q_sample_full(const Tensor<S>& x0, int t, const NoiseSchedule& sched,
                        const Tensor<S>& noise) {
    detail::check_q_sample_args(t, sched.T);
    require_same_shape(x0, noise, "q_sample_full");
    const S c_sig = static_cast<S>(std::sqrt(sched.alpha_bar(t)));
    const S c_noise = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar(t)));
    Tensor<S> out;
    out.shape = x0.shape;
    out.data.resize(x0.data.size());
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = c_sig * x0.data[i] + c_noise * noise.data[i];
    return out;
}

/// Patch-masked forward process: noised inside the mask, untouched (bit-exact)
/// outside it.
template <typename S>
Tensor<S> q_sample_patched(const Tensor<S>& x0, int t, const NoiseSchedule& sched,
                           const PatchMask& mask, const Tensor<S>& noise) {
    if (x0.rank() != 2 || x0.dim(0) != mask.h || x0.dim(1) != mask.w)
        throw std::invalid_argument("q_sample_patched: mask shape does not match slice");
    Tensor<S> noised = q_sample_full(x0, t, sched, noise);
    Tensor<S> out = x0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (mask.mask[i]) out.data[i] = noised.data[i];
    return out;
}

}  // namespace mcddpm
