#include "mcddpm/model.hpp"

#include <stdexcept>

namespace mcddpm {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::kFull: return "full";
        case Ablation::kNoBridge: return "no_bridge";
        case Ablation::kNoConditioning: return "no_conditioning";
    }
    return "full";
}

Ablation parse_ablation(const std::string& s) {
    if (s == "full") return Ablation::kFull;
    if (s == "no_bridge") return Ablation::kNoBridge;
    if (s == "no_conditioning") return Ablation::kNoConditioning;
    throw std::invalid_argument("unknown ablation: " + s);
}

std::size_t ModelConfig::expected_param_count() const {
    const UNetConfig u = unet_config();
    std::size_t n = u.encoder_param_count() + u.decoder_param_count() +
                    nn::AttentionBlock<float>::param_count(u.bottleneck_channels());
    if (!share_context_encoder) n += u.encoder_param_count();
    if (has_bridge()) n += bridge_config().param_count();
    return n;
}

template <typename S>
Model<S>::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    RandomStream rng(derive_seed(init_seed, "model-init"));
    const UNetConfig u = cfg_.unet_config();
    encoder_.init(store_, "unet.encoder", u, rng);
    attention_.init(store_, "unet.attention", u.bottleneck_channels(), u.attention_heads, rng);
    decoder_.init(store_, "unet.decoder", u, rng);
    if (!cfg_.share_context_encoder) {
        context_encoder_.emplace();
        context_encoder_->init(store_, "unet.context_encoder", u, rng);
    }
    if (cfg_.has_bridge()) {
        const BridgeConfig b = cfg_.bridge_config();
        bridge_extractor_.emplace();
        bridge_extractor_->init(store_, "bridge.extractor", b, 1, b.latent_channels, rng);
        bridge_reconstructor_.emplace();
        bridge_reconstructor_->init(store_, "bridge.reconstructor", b, b.latent_channels, 1, rng);
    }
}

template <typename S>
Tensor<S> Model<S>::lift(const Tensor<S>& slice) {
    if (slice.rank() != 2) throw std::invalid_argument("expected a rank-2 slice");
    Tensor<S> out = slice;
    out.shape = {1, slice.dim(0), slice.dim(1)};
    return out;
}

template <typename S>
Tensor<S> Model<S>::squeeze(const Tensor<S>& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 1)
        throw std::invalid_argument("expected a single-channel map");
    Tensor<S> out = chw;
    out.shape = {chw.dim(1), chw.dim(2)};
    return out;
}

template <typename S>
Tensor<S> Model<S>::bridge_encode(const Tensor<S>& x_full) const {
    if (!cfg_.has_bridge())
        throw std::invalid_argument("bridge_encode: bridge is ablated in this configuration");
    if (!x_full.all_finite())
        throw std::invalid_argument("bridge_encode: non-finite input");
    Graph g;
    Bound bp(g, store_);
    Tensor<S> lifted = lift(x_full);
    V out = bridge_extractor_->apply(g, bp, g.input_ref(&lifted));
    return g.value(out);
}

template <typename S>
Tensor<S> Model<S>::bridge_reconstruct(const Tensor<S>& z) const {
    if (!cfg_.has_bridge())
        throw std::invalid_argument("bridge_reconstruct: bridge is ablated in this configuration");
    if (z.rank() != 3 || z.dim(0) != cfg_.latent_channels)
        throw std::invalid_argument("bridge_reconstruct: latent channel mismatch");
    Graph g;
    Bound bp(g, store_);
    V out = bridge_reconstructor_->apply(g, bp, g.input_ref(&z));
    return squeeze(g.value(out));
}

template <typename S>
typename Model<S>::Encoded Model<S>::encode(const Tensor<S>& x_cat, int t) const {
    if (t < 0) throw std::invalid_argument("encode: t must be >= 0");
    Graph g;
    Bound bp(g, store_);
    auto enc = encoder_.encode(g, bp, g.input_ref(&x_cat), t);
    Encoded out;
    out.bottleneck = g.value(enc.bottleneck);
    for (V s : enc.skips) out.skips.push_back(g.value(s));
    return out;
}

template <typename S>
Tensor<S> Model<S>::make_context(const Tensor<S>& x0, const Tensor<S>* z) const {
    Graph g;
    Bound bp(g, store_);
    Tensor<S> lifted = lift(x0);
    V x0v = g.input_ref(&lifted);
    V zv = -1;
    if (cfg_.has_bridge()) {
        if (!z) throw std::invalid_argument("make_context: latent stack required");
        zv = g.input_ref(z);
    }
    V ctx = build_context(g, bp, x0v, zv);
    return g.value(ctx);
}

template <typename S>
typename Model<S>::V Model<S>::build_context(Graph& g, Bound& bp, V x0_lifted, V z) const {
    V cat = cfg_.has_bridge() ? g.concat_ch(x0_lifted, z) : x0_lifted;
    const UNetEncoder<S>& enc = context_encoder_ ? *context_encoder_ : encoder_;
    return enc.encode(g, bp, cat, 0).bottleneck;
}

template <typename S>
Tensor<S> Model<S>::cross_attention(const Tensor<S>& queries, const Tensor<S>& context,
                                    std::vector<Tensor<S>>* attn_weights) const {
    Graph g;
    Bound bp(g, store_);
    V out = attention_.apply(g, bp, g.input_ref(&queries), g.input_ref(&context), attn_weights);
    return g.value(out);
}

template <typename S>
Tensor<S> Model<S>::decode(const Tensor<S>& attended, const std::vector<Tensor<S>>& skips) const {
    Graph g;
    Bound bp(g, store_);
    std::vector<V> skip_ids;
    skip_ids.reserve(skips.size());
    for (const auto& s : skips) skip_ids.push_back(g.input_ref(&s));
    V out = decoder_.decode(g, bp, g.input_ref(&attended), skip_ids);
    return squeeze(g.value(out));
}

template <typename S>
typename Model<S>::V Model<S>::build_predict(Graph& g, Bound& bp, V x_lifted, V z, int t, V ctx,
                                             std::vector<Tensor<S>>* attn_weights) const {
    V cat = cfg_.has_bridge() ? g.concat_ch(x_lifted, z) : x_lifted;
    auto enc = encoder_.encode(g, bp, cat, t);
    V attended;
    if (cfg_.has_conditioning()) {
        if (ctx < 0) throw std::invalid_argument("predict_x0: context required");
        attended = attention_.apply(g, bp, enc.bottleneck, ctx, attn_weights);
    } else {
        attended = attention_.apply(g, bp, enc.bottleneck, enc.bottleneck, attn_weights);
    }
    forward_count_.fetch_add(1, std::memory_order_relaxed);
    return decoder_.decode(g, bp, attended, enc.skips);
}

template <typename S>
Tensor<S> Model<S>::predict_x0(const Tensor<S>& x_in, const Tensor<S>* z, int t,
                               const Tensor<S>* context) const {
    Graph g;
    Bound bp(g, store_);
    Tensor<S> lifted = lift(x_in);
    V xv = g.input_ref(&lifted);
    V zv = -1;
    if (cfg_.has_bridge()) {
        if (!z) throw std::invalid_argument("predict_x0: latent stack required");
        zv = g.input_ref(z);
    }
    V cv = -1;
    if (cfg_.has_conditioning()) {
        if (!context) throw std::invalid_argument("predict_x0: context required");
        cv = g.input_ref(context);
    }
    V out = build_predict(g, bp, xv, zv, t, cv);
    return squeeze(g.value(out));
}

template <typename S>
typename Model<S>::SampleLoss Model<S>::build_sample_loss(Graph& g, Bound& bp,
                                                          const Tensor<S>& x0,
                                                          const Tensor<S>& xz,
                                                          const Tensor<S>& xp, int t, S lambda,
                                                          int p_norm,
                                                          bool stop_context_gradient) const {
    if (p_norm != 1 && p_norm != 2)
        throw std::invalid_argument("build_sample_loss: p must be 1 or 2");
    require_same_shape(x0, xp, "build_sample_loss");
    SampleLoss out;

    Tensor<S> x0l = lift(x0), xpl = lift(xp);
    V x0v = g.input(std::move(x0l));
    V xpv = g.input(std::move(xpl));

    V z = -1;
    if (cfg_.has_bridge()) {
        require_same_shape(x0, xz, "build_sample_loss");
        Tensor<S> xzl = lift(xz);
        V xzv = g.input(std::move(xzl));
        z = bridge_extractor_->apply(g, bp, xzv);
        out.xz_hat = bridge_reconstructor_->apply(g, bp, z);
    }

    V ctx = -1;
    if (cfg_.has_conditioning()) {
        ctx = build_context(g, bp, x0v, z);
        if (stop_context_gradient) ctx = g.detach(ctx);
    }

    out.x0_hat = build_predict(g, bp, xpv, z, t, ctx);

    auto norm_term = [&](V pred, V target) {
        return p_norm == 2 ? g.mean_sq_diff(pred, target) : g.mean_abs_diff(pred, target);
    };
    out.recon_term = norm_term(out.x0_hat, x0v);
    if (cfg_.has_bridge()) {
        out.bridge_term = norm_term(out.xz_hat, x0v);
        out.loss = g.add_scaled(out.recon_term, out.bridge_term, lambda);
    } else {
        out.loss = out.recon_term;
    }
    return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace mcddpm
