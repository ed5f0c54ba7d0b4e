#pragma once

#include <string>

#include "mcddpm/nn/modules.hpp"

namespace mcddpm {

/// Residual feature stack shared by the latent extractor and the latent
/// reconstructor: 1x1 channel projection in, residual blocks at constant
/// width and full resolution, norm/act, 1x1 projection out.
struct BridgeConfig {
    int latent_channels = 4;  // channels of Z
    int width = 32;           // hidden width of the residual blocks
    int blocks = 2;
    int groups = 8;

    std::size_t stack_param_count(int in_ch, int out_ch) const {
        std::size_t n = nn::Conv2dLayer<float>::param_count(width, in_ch, 1);
        for (int i = 0; i < blocks; ++i)
            n += nn::ResBlock<float>::param_count(width, width, 0);
        n += nn::GroupNormLayer<float>::param_count(width);
        n += nn::Conv2dLayer<float>::param_count(out_ch, width, 1);
        return n;
    }
    /// extractor (1 -> latent) plus reconstructor (latent -> 1)
    std::size_t param_count() const {
        return stack_param_count(1, latent_channels) + stack_param_count(latent_channels, 1);
    }
};

template <typename S>
class BridgeStack {
public:
    void init(nn::ParamStore<S>& store, const std::string& name, const BridgeConfig& cfg,
              int in_ch, int out_ch, RandomStream& rng) {
        in_ch_ = in_ch;
        out_ch_ = out_ch;
        in_proj_.init(store, name + ".in_proj", cfg.width, in_ch, 1, 1, 0, rng);
        blocks_.resize(static_cast<std::size_t>(cfg.blocks));
        for (int i = 0; i < cfg.blocks; ++i)
            blocks_[static_cast<std::size_t>(i)].init(store, name + ".block" + std::to_string(i),
                                                      cfg.width, cfg.width, cfg.groups, 0, rng);
        out_norm_.init(store, name + ".out_norm", cfg.width, nn::fit_groups(cfg.width, cfg.groups));
        out_proj_.init(store, name + ".out_proj", out_ch, cfg.width, 1, 1, 0, rng);
    }

    nn::V<S> apply(nn::Graph<S>& g, nn::BoundParams<S>& bp, nn::V<S> x) const {
        if (g.value(x).rank() != 3 || g.value(x).dim(0) != in_ch_)
            throw std::invalid_argument("bridge: input channel mismatch");
        nn::V<S> h = in_proj_.apply(g, bp, x);
        for (const auto& b : blocks_) h = b.apply(g, bp, h);
        h = g.silu(out_norm_.apply(g, bp, h));
        return out_proj_.apply(g, bp, h);
    }

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }

private:
    nn::Conv2dLayer<S> in_proj_, out_proj_;
    std::vector<nn::ResBlock<S>> blocks_;
    nn::GroupNormLayer<S> out_norm_;
    int in_ch_ = 0, out_ch_ = 0;
};

}  // namespace mcddpm
