#pragma once

#include <string>
#include <vector>

#include "mcddpm/nn/modules.hpp"

namespace mcddpm {

struct UNetConfig {
    int in_channels = 5;  // 1 + latent channels (1 when the bridge is ablated)
    int base_width = 32;  // doubles per downsampling stage
    int depth = 3;        // number of downsampling stages
    int attention_heads = 4;
    int time_embed_dim = 64;
    int groups = 8;

    int bottleneck_channels() const { return base_width << depth; }
    int stage_width(int i) const { return base_width << i; }

    void validate_spatial(int h, int w) const {
        const int f = 1 << depth;
        if (h % f != 0 || w % f != 0)
            throw std::invalid_argument("unet: spatial dims must be divisible by 2^depth");
    }

    std::size_t encoder_param_count() const;
    std::size_t decoder_param_count() const;
};

/// Downsampling half of the denoising network: stem, per-stage timed residual
/// blocks with strided-conv downsampling, and a timed bottleneck block. The
/// time embedding enters here only; the decoder is time-free.
template <typename S>
class UNetEncoder {
public:
    struct Encoded {
        nn::V<S> bottleneck = -1;
        std::vector<nn::V<S>> skips;  // per-stage pre-downsample features
    };

    void init(nn::ParamStore<S>& store, const std::string& name, const UNetConfig& cfg,
              RandomStream& rng) {
        cfg_ = cfg;
        tmlp_.init(store, name + ".time_mlp", cfg.time_embed_dim, rng);
        stem_.init(store, name + ".stem", cfg.base_width, cfg.in_channels, 3, 1, 1, rng);
        blocks_.resize(static_cast<std::size_t>(cfg.depth));
        downs_.resize(static_cast<std::size_t>(cfg.depth));
        for (int i = 0; i < cfg.depth; ++i) {
            const int wi = cfg.stage_width(i);
            blocks_[static_cast<std::size_t>(i)].init(store, name + ".enc" + std::to_string(i),
                                                      wi, wi, cfg.groups, cfg.time_embed_dim, rng);
            downs_[static_cast<std::size_t>(i)].init(store, name + ".down" + std::to_string(i),
                                                     cfg.stage_width(i + 1), wi, 3, 2, 1, rng);
        }
        mid_.init(store, name + ".mid", cfg.bottleneck_channels(), cfg.bottleneck_channels(),
                  cfg.groups, cfg.time_embed_dim, rng);
    }

    Encoded encode(nn::Graph<S>& g, nn::BoundParams<S>& bp, nn::V<S> x_cat, int t) const {
        const auto& xt = g.value(x_cat);
        if (xt.rank() != 3 || xt.dim(0) != cfg_.in_channels)
            throw std::invalid_argument("unet encode: input channel mismatch");
        cfg_.validate_spatial(xt.dim(1), xt.dim(2));
        nn::V<S> temb = tmlp_.apply(g, bp, t);
        Encoded e;
        nn::V<S> h = stem_.apply(g, bp, x_cat);
        for (int i = 0; i < cfg_.depth; ++i) {
            h = blocks_[static_cast<std::size_t>(i)].apply(g, bp, h, temb);
            e.skips.push_back(h);
            h = downs_[static_cast<std::size_t>(i)].apply(g, bp, h);
        }
        e.bottleneck = mid_.apply(g, bp, h, temb);
        return e;
    }

    const UNetConfig& config() const { return cfg_; }

private:
    UNetConfig cfg_;
    nn::TimeMlp<S> tmlp_;
    nn::Conv2dLayer<S> stem_;
    std::vector<nn::ResBlock<S>> blocks_;
    std::vector<nn::Conv2dLayer<S>> downs_;
    nn::ResBlock<S> mid_;
};

/// Upsampling half: bottleneck block, per-stage nearest-2x upsampling with a
/// 3x3 conv, skip concatenation, residual block, and the output head.
template <typename S>
class UNetDecoder {
public:
    void init(nn::ParamStore<S>& store, const std::string& name, const UNetConfig& cfg,
              RandomStream& rng) {
        cfg_ = cfg;
        mid_.init(store, name + ".mid", cfg.bottleneck_channels(), cfg.bottleneck_channels(),
                  cfg.groups, 0, rng);
        ups_.resize(static_cast<std::size_t>(cfg.depth));
        blocks_.resize(static_cast<std::size_t>(cfg.depth));
        for (int i = cfg.depth - 1; i >= 0; --i) {
            const int wi = cfg.stage_width(i);
            ups_[static_cast<std::size_t>(i)].init(store, name + ".up" + std::to_string(i), wi,
                                                   cfg.stage_width(i + 1), 3, 1, 1, rng);
            blocks_[static_cast<std::size_t>(i)].init(store, name + ".dec" + std::to_string(i),
                                                      2 * wi, wi, cfg.groups, 0, rng);
        }
        out_norm_.init(store, name + ".out_norm", cfg.base_width,
                       nn::fit_groups(cfg.base_width, cfg.groups));
        out_conv_.init(store, name + ".out_conv", 1, cfg.base_width, 3, 1, 1, rng);
    }

    nn::V<S> decode(nn::Graph<S>& g, nn::BoundParams<S>& bp, nn::V<S> attended,
                    const std::vector<nn::V<S>>& skips) const {
        if (static_cast<int>(skips.size()) != cfg_.depth)
            throw std::invalid_argument("unet decode: skip stack depth mismatch");
        nn::V<S> h = mid_.apply(g, bp, attended);
        for (int i = cfg_.depth - 1; i >= 0; --i) {
            h = ups_[static_cast<std::size_t>(i)].apply(g, bp, g.upsample2(h));
            const auto& st = g.value(skips[static_cast<std::size_t>(i)]);
            const auto& ht = g.value(h);
            if (st.dim(1) != ht.dim(1) || st.dim(2) != ht.dim(2) ||
                st.dim(0) != cfg_.stage_width(i))
                throw std::invalid_argument("unet decode: skip shape mismatch at stage " +
                                            std::to_string(i));
            h = blocks_[static_cast<std::size_t>(i)].apply(
                g, bp, g.concat_ch(h, skips[static_cast<std::size_t>(i)]));
        }
        return out_conv_.apply(g, bp, g.silu(out_norm_.apply(g, bp, h)));
    }

private:
    UNetConfig cfg_;
    nn::ResBlock<S> mid_;
    std::vector<nn::Conv2dLayer<S>> ups_;
    std::vector<nn::ResBlock<S>> blocks_;
    nn::GroupNormLayer<S> out_norm_;
    nn::Conv2dLayer<S> out_conv_;
};

inline std::size_t UNetConfig::encoder_param_count() const {
    using namespace nn;
    std::size_t n = TimeMlp<float>::param_count(time_embed_dim);
    n += Conv2dLayer<float>::param_count(base_width, in_channels, 3);
    for (int i = 0; i < depth; ++i) {
        n += ResBlock<float>::param_count(stage_width(i), stage_width(i), time_embed_dim);
        n += Conv2dLayer<float>::param_count(stage_width(i + 1), stage_width(i), 3);
    }
    n += ResBlock<float>::param_count(bottleneck_channels(), bottleneck_channels(),
                                      time_embed_dim);
    return n;
}

inline std::size_t UNetConfig::decoder_param_count() const {
    using namespace nn;
    std::size_t n = ResBlock<float>::param_count(bottleneck_channels(), bottleneck_channels(), 0);
    for (int i = 0; i < depth; ++i) {
        n += Conv2dLayer<float>::param_count(stage_width(i), stage_width(i + 1), 3);
        n += ResBlock<float>::param_count(2 * stage_width(i), stage_width(i), 0);
    }
    n += GroupNormLayer<float>::param_count(base_width);
    n += Conv2dLayer<float>::param_count(1, base_width, 3);
    return n;
}

}  // namespace mcddpm
