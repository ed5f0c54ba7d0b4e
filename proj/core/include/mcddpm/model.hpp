#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "mcddpm/bridge.hpp"
#include "mcddpm/unet.hpp"

namespace mcddpm {

enum class Ablation { kFull, kNoBridge, kNoConditioning };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct ModelConfig {
    int latent_channels = 4;
    int bridge_width = 32;
    int bridge_blocks = 2;
    int base_width = 32;
    int depth = 3;
    int attention_heads = 4;
    int time_embed_dim = 64;
    int groups = 8;
    Ablation ablation = Ablation::kFull;
    bool share_context_encoder = true;

    bool has_bridge() const { return ablation != Ablation::kNoBridge; }
    bool has_conditioning() const { return ablation != Ablation::kNoConditioning; }

    UNetConfig unet_config() const {
        UNetConfig u;
        u.in_channels = has_bridge() ? 1 + latent_channels : 1;
        u.base_width = base_width;
        u.depth = depth;
        u.attention_heads = attention_heads;
        u.time_embed_dim = time_embed_dim;
        u.groups = groups;
        return u;
    }
    BridgeConfig bridge_config() const {
        BridgeConfig b;
        b.latent_channels = latent_channels;
        b.width = bridge_width;
        b.blocks = bridge_blocks;
        b.groups = groups;
        return b;
    }

    /// Total registered parameter count implied by this configuration.
    std::size_t expected_param_count() const;
};

/// The full network: latent extractor/reconstructor pair, split denoiser with
/// a cross-attention bottleneck, and the clean-image context branch. Forward
/// passes are pure functions of (input, parameters); parameter updates are
/// owned by the training loop.
template <typename S>
class Model {
public:
    using V = nn::V<S>;
    using Graph = nn::Graph<S>;
    using Bound = nn::BoundParams<S>;

    explicit Model(ModelConfig cfg, std::uint64_t init_seed = 0x9db5e0a2u);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore<S>& params() { return store_; }
    const nn::ParamStore<S>& params() const { return store_; }

    // ---- plain-tensor operations (each runs one forward pass) ----------

    /// (h, w) fully-noisy slice -> (latent_channels, h, w) latent stack.
    Tensor<S> bridge_encode(const Tensor<S>& x_full) const;

    /// (latent_channels, h, w) latent stack -> (h, w) reconstruction.
    Tensor<S> bridge_reconstruct(const Tensor<S>& z) const;

    struct Encoded {
        Tensor<S> bottleneck;
        std::vector<Tensor<S>> skips;
    };

    /// Multichannel input (in_channels, h, w) at step t in [0, T].
    Encoded encode(const Tensor<S>& x_cat, int t) const;

    /// Context from the clean slice (z may be null when the bridge is
    /// ablated): bottleneck of the clean branch at t = 0, skips discarded.
    Tensor<S> make_context(const Tensor<S>& x0, const Tensor<S>* z) const;

    /// Queries attend to the context feature map; output shape equals the
    /// query shape. Optionally exports per-head attention weights.
    Tensor<S> cross_attention(const Tensor<S>& queries, const Tensor<S>& context,
                              std::vector<Tensor<S>>* attn_weights = nullptr) const;

    Tensor<S> decode(const Tensor<S>& attended, const std::vector<Tensor<S>>& skips) const;

    /// Full denoising pass producing the clean-image estimate. z is required
    /// unless the bridge is ablated; context is ignored when conditioning is
    /// ablated (bottleneck self-attention instead).
    Tensor<S> predict_x0(const Tensor<S>& x_in, const Tensor<S>* z, int t,
                         const Tensor<S>* context) const;

    long unet_forward_count() const { return forward_count_.load(); }
    void reset_forward_count() { forward_count_.store(0); }

    // ---- graph composition (training / gradient checks) ----------------

    struct SampleLoss {
        V loss = -1;
        V recon_term = -1;   // || x0_hat - x0 ||_p
        V bridge_term = -1;  // || xz_hat - x0 ||_p (absent when bridge ablated)
        V x0_hat = -1;
        V xz_hat = -1;
    };

    /// Builds the per-sample dual-term training loss on an existing tape.
    /// Inputs are the clean slice and the two corruptions (rank 2, h x w).
    SampleLoss build_sample_loss(Graph& g, Bound& bp, const Tensor<S>& x0, const Tensor<S>& xz,
                                 const Tensor<S>& xp, int t, S lambda, int p_norm,
                                 bool stop_context_gradient) const;

    V build_bridge_encode(Graph& g, Bound& bp, V xz) const {
        return bridge_extractor_->apply(g, bp, xz);
    }
    V build_bridge_reconstruct(Graph& g, Bound& bp, V z) const {
        return bridge_reconstructor_->apply(g, bp, z);
    }

private:
    static Tensor<S> lift(const Tensor<S>& slice);     // (h,w) -> (1,h,w)
    static Tensor<S> squeeze(const Tensor<S>& chw);    // (1,h,w) -> (h,w)

    V build_context(Graph& g, Bound& bp, V x0_lifted, V z) const;
    V build_predict(Graph& g, Bound& bp, V x_lifted, V z, int t, V ctx,
                    std::vector<Tensor<S>>* attn_weights = nullptr) const;

    ModelConfig cfg_;
    nn::ParamStore<S> store_;
    UNetEncoder<S> encoder_;
    UNetDecoder<S> decoder_;
    nn::AttentionBlock<S> attention_;
    std::optional<UNetEncoder<S>> context_encoder_;  // when encoder is unshared
    std::optional<BridgeStack<S>> bridge_extractor_;
    std::optional<BridgeStack<S>> bridge_reconstructor_;
    mutable std::atomic<long> forward_count_{0};
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace mcddpm
