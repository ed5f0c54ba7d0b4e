#include "mcddpm/inference.hpp"

#include <stdexcept>

#include "mcddpm/random.hpp"

namespace mcddpm {

Tensor<float> reconstruct_slice(const ModelF& model, const NoiseSchedule& schedule,
                                const Tensor<float>& x, const InferenceConfig& cfg,
                                std::uint64_t slice_index) {
    if (x.rank() != 2) throw std::invalid_argument("reconstruct_slice: rank-2 slice expected");
    if (cfg.repeats < 1) throw std::invalid_argument("reconstruct_slice: repeats must be >= 1");
    RandomStream rng(derive_seed(cfg.seed, "slice", slice_index));
    const bool bridged = model.config().has_bridge();
    const bool conditioned = model.config().has_conditioning();

    Tensor<float> accum(x.shape);
    for (int rep = 0; rep < cfg.repeats; ++rep) {
        const Tensor<float> noise = rng.gaussian_tensor<float>(x.shape);
        const Tensor<float> xt = q_sample_full(x, cfg.t_test, schedule, noise);

        Tensor<float> z;
        if (bridged) {
            if (cfg.independent_latent_noise) {
                const Tensor<float> noise2 = rng.gaussian_tensor<float>(x.shape);
                z = model.bridge_encode(q_sample_full(x, cfg.t_test, schedule, noise2));
            } else {
                z = model.bridge_encode(xt);
            }
        }
        Tensor<float> ctx;
        if (conditioned) ctx = model.make_context(x, bridged ? &z : nullptr);

        const Tensor<float> out = model.predict_x0(xt, bridged ? &z : nullptr, cfg.t_test,
                                                   conditioned ? &ctx : nullptr);
        for (std::size_t i = 0; i < accum.data.size(); ++i) accum.data[i] += out.data[i];
    }
    if (cfg.repeats > 1)
        for (auto& v : accum.data) v /= static_cast<float>(cfg.repeats);
    return accum;
}

Volume reconstruct_volume(const ModelF& model, const NoiseSchedule& schedule, const Volume& v,
                          const InferenceConfig& cfg) {
    Volume out(v.h, v.w, v.d);
#pragma omp parallel for schedule(dynamic)
    for (int s = 0; s < v.d; ++s) {
        const Tensor<float> slice = extract_slice<float>(v, s);
        const Tensor<float> rec =
            reconstruct_slice(model, schedule, slice, cfg, static_cast<std::uint64_t>(s));
        insert_slice(out, s, rec);
    }
    return out;
}

AnomalyMap residual_map(const Volume& v, const Volume& v_hat, int p) {
    require_same_dims(v, v_hat, "residual_map");
    if (p != 1 && p != 2) throw std::invalid_argument("residual_map: p must be 1 or 2");
    AnomalyMap m;
    m.p_norm = p;
    m.data = Volume(v.h, v.w, v.d);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const float diff = v.data[i] - v_hat.data[i];
        m.data.data[i] = p == 1 ? std::abs(diff) : diff * diff;
    }
    return m;
}

}  // namespace mcddpm
