#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcddpm/nn/graph.hpp"
#include "mcddpm/nn/params.hpp"

namespace mcddpm::nn {

template <typename S>
using V = typename Graph<S>::V;

template <typename S>
struct Conv2dLayer {
    int w = -1, b = -1;
    int stride = 1, pad = 1;

    void init(ParamStore<S>& store, const std::string& name, int cout, int cin, int k,
              int stride_, int pad_, RandomStream& rng) {
        stride = stride_;
        pad = pad_;
        w = store.add(name + ".weight", init_conv_weight<S>(cout, cin, k, rng));
        b = store.add(name + ".bias", Tensor<S>::zeros({cout}));
    }

    V<S> apply(Graph<S>& g, BoundParams<S>& bp, V<S> x) const {
        return g.conv2d(x, bp[w], bp[b], stride, pad);
    }

    static std::size_t param_count(int cout, int cin, int k) {
        return static_cast<std::size_t>(cout) * cin * k * k + static_cast<std::size_t>(cout);
    }
};

template <typename S>
struct GroupNormLayer {
    int gamma = -1, beta = -1;
    int groups = 8;
    static constexpr double kEps = 1e-5;

    void init(ParamStore<S>& store, const std::string& name, int channels, int groups_) {
        groups = groups_;
        gamma = store.add(name + ".gamma", Tensor<S>::full({channels}, S(1)));
        beta = store.add(name + ".beta", Tensor<S>::zeros({channels}));
    }

    V<S> apply(Graph<S>& g, BoundParams<S>& bp, V<S> x) const {
        return g.group_norm(x, bp[gamma], bp[beta], groups, static_cast<S>(kEps));
    }

    static std::size_t param_count(int channels) { return 2u * static_cast<std::size_t>(channels); }
};

template <typename S>
struct LinearLayer {
    int w = -1, b = -1;

    void init(ParamStore<S>& store, const std::string& name, int dout, int din,
              RandomStream& rng) {
        w = store.add(name + ".weight", init_linear_weight<S>(dout, din, rng));
        b = store.add(name + ".bias", Tensor<S>::zeros({dout}));
    }

    V<S> apply(Graph<S>& g, BoundParams<S>& bp, V<S> x) const {
        return g.linear(x, bp[w], bp[b]);
    }

    static std::size_t param_count(int dout, int din) {
        return static_cast<std::size_t>(dout) * din + static_cast<std::size_t>(dout);
    }
};

/// Picks the largest group count <= preferred that divides the channel count.
inline int fit_groups(int channels, int preferred) {
    int g = std::min(channels, preferred);
    while (g > 1 && channels % g != 0) --g;
    return g;
}

/// Pre-activation residual block: x + conv(act(norm(conv(act(norm(x)))))).
/// When a time embedding is wired in, its projection is added as a
/// per-channel bias after the first convolution.
template <typename S>
struct ResBlock {
    GroupNormLayer<S> norm1, norm2;
    Conv2dLayer<S> conv1, conv2;
    std::optional<Conv2dLayer<S>> skip_proj;     // 1x1 when cin != cout
    std::optional<LinearLayer<S>> time_proj;     // when timed
    int cin = 0, cout = 0;

    void init(ParamStore<S>& store, const std::string& name, int cin_, int cout_, int groups,
              int time_dim, RandomStream& rng) {
        cin = cin_;
        cout = cout_;
        norm1.init(store, name + ".norm1", cin, fit_groups(cin, groups));
        conv1.init(store, name + ".conv1", cout, cin, 3, 1, 1, rng);
        norm2.init(store, name + ".norm2", cout, fit_groups(cout, groups));
        conv2.init(store, name + ".conv2", cout, cout, 3, 1, 1, rng);
        if (cin != cout) {
            skip_proj.emplace();
            skip_proj->init(store, name + ".skip", cout, cin, 1, 1, 0, rng);
        }
        if (time_dim > 0) {
            time_proj.emplace();
            time_proj->init(store, name + ".time_proj", cout, time_dim, rng);
        }
    }

    V<S> apply(Graph<S>& g, BoundParams<S>& bp, V<S> x, V<S> temb = -1) const {
        V<S> h = conv1.apply(g, bp, g.silu(norm1.apply(g, bp, x)));
        if (time_proj && temb >= 0)
            h = g.add_channel_bias(h, time_proj->apply(g, bp, g.silu(temb)));
        h = conv2.apply(g, bp, g.silu(norm2.apply(g, bp, h)));
        V<S> sk = skip_proj ? skip_proj->apply(g, bp, x) : x;
        return g.add(h, sk);
    }

    static std::size_t param_count(int cin, int cout, int time_dim) {
        std::size_t n = GroupNormLayer<S>::param_count(cin) +
                        GroupNormLayer<S>::param_count(cout) +
                        Conv2dLayer<S>::param_count(cout, cin, 3) +
                        Conv2dLayer<S>::param_count(cout, cout, 3);
        if (cin != cout) n += Conv2dLayer<S>::param_count(cout, cin, 1);
        if (time_dim > 0) n += LinearLayer<S>::param_count(cout, time_dim);
        return n;
    }
};

/// Sinusoidal embedding of an integer time step (t = 0 allowed).
template <typename S>
Tensor<S> sinusoidal_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    Tensor<S> e({dim});
    for (int i = 0; i < half; ++i) {
        const double freq =
            half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1)) : 1.0;
        e.data[static_cast<std::size_t>(i)] = static_cast<S>(std::sin(t * freq));
        e.data[static_cast<std::size_t>(half + i)] = static_cast<S>(std::cos(t * freq));
    }
    return e;
}

/// Two-layer projection of the sinusoidal embedding.
template <typename S>
struct TimeMlp {
    LinearLayer<S> lin1, lin2;
    int dim = 0;

    void init(ParamStore<S>& store, const std::string& name, int dim_, RandomStream& rng) {
        dim = dim_;
        lin1.init(store, name + ".lin1", dim, dim, rng);
        lin2.init(store, name + ".lin2", dim, dim, rng);
    }

    V<S> apply(Graph<S>& g, BoundParams<S>& bp, int t) const {
        V<S> e = g.input(sinusoidal_embedding<S>(t, dim));
        return lin2.apply(g, bp, g.silu(lin1.apply(g, bp, e)));
    }

    static std::size_t param_count(int dim) { return 2 * LinearLayer<S>::param_count(dim, dim); }
};

/// Multi-head attention over flattened spatial positions with a residual
/// connection. Queries come from `feats`; keys/values from `ctx`. Passing the
/// same node for both yields self-attention with identical parameter count.
/// Context carries no positional encoding, so the output is invariant to
/// permutations of context positions.
template <typename S>
struct AttentionBlock {
    int wq = -1, wk = -1, wv = -1, wo = -1;
    int heads = 4;
    int channels = 0;

    void init(ParamStore<S>& store, const std::string& name, int channels_, int heads_,
              RandomStream& rng) {
        channels = channels_;
        heads = heads_;
        if (channels % heads != 0)
            throw std::invalid_argument("attention: channels not divisible by heads");
        wq = store.add(name + ".wq", init_linear_weight<S>(channels, channels, rng));
        wk = store.add(name + ".wk", init_linear_weight<S>(channels, channels, rng));
        wv = store.add(name + ".wv", init_linear_weight<S>(channels, channels, rng));
        wo = store.add(name + ".wo", init_linear_weight<S>(channels, channels, rng));
    }

    V<S> apply(Graph<S>& g, BoundParams<S>& bp, V<S> feats, V<S> ctx,
               std::vector<Tensor<S>>* attn_weights = nullptr) const {
        const auto& ft = g.value(feats);
        if (ft.rank() != 3 || ft.dim(0) != channels)
            throw std::invalid_argument("attention: query channel mismatch");
        if (g.value(ctx).rank() != 3 || g.value(ctx).dim(0) != channels)
            throw std::invalid_argument("attention: context channel mismatch");
        const int h = ft.dim(1), w = ft.dim(2);
        const int dh = channels / heads;

        V<S> q = g.chw_to_nc(feats);
        V<S> kv = g.chw_to_nc(ctx);
        V<S> Q = g.matmul_nt(q, bp[wq]);
        V<S> K = g.matmul_nt(kv, bp[wk]);
        V<S> Vp = g.matmul_nt(kv, bp[wv]);
        std::vector<V<S>> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            V<S> qh = g.slice_cols(Q, hd * dh, (hd + 1) * dh);
            V<S> kh = g.slice_cols(K, hd * dh, (hd + 1) * dh);
            V<S> vh = g.slice_cols(Vp, hd * dh, (hd + 1) * dh);
            V<S> scores = g.scale(g.matmul_nt(qh, kh), static_cast<S>(1.0 / std::sqrt(dh)));
            V<S> attn = g.softmax_rows(scores);
            if (attn_weights) attn_weights->push_back(g.value(attn));
            head_outs.push_back(g.matmul(attn, vh));
        }
        V<S> merged = heads == 1 ? head_outs[0] : g.concat_cols(head_outs);
        V<S> out = g.matmul_nt(merged, bp[wo]);
        return g.add(feats, g.nc_to_chw(out, h, w));
    }

    static std::size_t param_count(int channels) {
        return 4u * static_cast<std::size_t>(channels) * channels;
    }
};

}  // namespace mcddpm::nn
