#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mcddpm/tensor.hpp"

namespace mcddpm::nn {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatRM<S>>;

namespace detail {

/// im2col for square kernels: x (C,H,W) -> cols (C*k*k, Ho*Wo), row-major.
template <typename S>
void im2col(const S* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            S* cols) {
    for (int c = 0; c < C; ++c) {
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
                S* row = cols + (static_cast<std::size_t>(c) * k * k + di * k + dj) *
                                    (static_cast<std::size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + di - pad;
                    S* dst = row + static_cast<std::size_t>(oy) * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + Wo, S(0));
                        continue;
                    }
                    const S* src = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + dj - pad;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of im2col: cols (C*k*k, Ho*Wo) accumulated into dx.
template <typename S>
void col2im_add(const S* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
                S* dx) {
    for (int c = 0; c < C; ++c) {
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
                const S* row = cols + (static_cast<std::size_t>(c) * k * k + di * k + dj) *
                                          (static_cast<std::size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + di - pad;
                    if (iy < 0 || iy >= H) continue;
                    const S* src = row + static_cast<std::size_t>(oy) * Wo;
                    S* dst = dx + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + dj - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename S>
S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

}  // namespace detail

/// Dynamic reverse-mode tape. Ops execute eagerly; backward() walks the tape
/// in reverse id order. One tape per forward pass; not thread-shared.
template <typename S>
class Graph {
public:
    using V = int;

    // ---- leaves -------------------------------------------------------

    /// Constant leaf (owned storage); no gradient tracked.
    V input(Tensor<S> t) {
        V id = make_owned(std::move(t));
        nodes_[id].track = false;
        return id;
    }

    /// Constant leaf referencing external storage (must outlive the graph).
    V input_ref(const Tensor<S>* t) {
        V id = make_ref(t);
        nodes_[id].track = false;
        return id;
    }

    /// Differentiable leaf referencing external storage. After backward(),
    /// leaf_grad() exposes the accumulated gradient.
    V param(const Tensor<S>* t) { return make_ref(t); }

    // ---- shape/value access -------------------------------------------

    const Tensor<S>& value(V id) const {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        return n.ext ? *n.ext : n.owned;
    }

    /// Gradient of a leaf (or any node) after backward(); nullptr if the node
    /// never received a gradient.
    const Tensor<S>* grad(V id) const {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        return n.grad.empty() ? nullptr : &n.grad;
    }

    // ---- rank-3 feature-map ops ----------------------------------------

    /// x (Cin,H,W), w (Cout,Cin,k,k), b (Cout) -> (Cout,Ho,Wo).
    V conv2d(V x, V w, V b, int stride, int pad) {
        const auto& xt = value(x);
        const auto& wt = value(w);
        const auto& bt = value(b);
        if (xt.rank() != 3 || wt.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
        const int Cin = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
        const int Cout = wt.dim(0), k = wt.dim(2);
        if (wt.dim(1) != Cin || wt.dim(3) != k)
            throw std::invalid_argument("conv2d: weight shape mismatch");
        if (bt.rank() != 1 || bt.dim(0) != Cout)
            throw std::invalid_argument("conv2d: bias shape mismatch");
        const int Ho = (H + 2 * pad - k) / stride + 1;
        const int Wo = (W + 2 * pad - k) / stride + 1;
        if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

        Tensor<S> out({Cout, Ho, Wo});
        const int ckk = Cin * k * k;
        const int npix = Ho * Wo;
        Tensor<S> cols({ckk, npix});
        detail::im2col(xt.data.data(), Cin, H, W, k, stride, pad, Ho, Wo, cols.data.data());
        {
            CMapM<S> Wm(wt.data.data(), Cout, ckk);
            CMapM<S> Cm(cols.data.data(), ckk, npix);
            MapM<S> Ym(out.data.data(), Cout, npix);
            Ym.noalias() = Wm * Cm;
            for (int co = 0; co < Cout; ++co) Ym.row(co).array() += bt.data[co];
        }
        V id = make_owned(std::move(out), {x, w, b});
        nodes_[id].back = [x, w, b, stride, pad, id](Graph& g) {
            const auto& xt2 = g.value(x);
            const auto& wt2 = g.value(w);
            const int Cin2 = xt2.dim(0), H2 = xt2.dim(1), W2 = xt2.dim(2);
            const int Cout2 = wt2.dim(0), k2 = wt2.dim(2);
            const auto& gy = g.nodes_[id].grad;
            const int Ho2 = g.value(id).dim(1), Wo2 = g.value(id).dim(2);
            const int ckk2 = Cin2 * k2 * k2;
            const int npix2 = Ho2 * Wo2;
            Tensor<S> cols2({ckk2, npix2});
            detail::im2col(xt2.data.data(), Cin2, H2, W2, k2, stride, pad, Ho2, Wo2,
                           cols2.data.data());
            CMapM<S> dY(gy.data.data(), Cout2, npix2);
            if (g.tracked(w)) {
                MapM<S> dW(g.grad_buf(w).data.data(), Cout2, ckk2);
                CMapM<S> Cm(cols2.data.data(), ckk2, npix2);
                dW.noalias() += dY * Cm.transpose();
            }
            if (g.tracked(b)) {
                // serial accumulation: Eigen's SIMD redux order depends on
                // buffer alignment, which would break bitwise reproducibility
                auto& db = g.grad_buf(b);
                for (int co = 0; co < Cout2; ++co) {
                    double s = 0.0;
                    const S* row = gy.data.data() + static_cast<std::size_t>(co) * npix2;
                    for (int i = 0; i < npix2; ++i) s += static_cast<double>(row[i]);
                    db.data[co] += static_cast<S>(s);
                }
            }
            if (g.tracked(x)) {
                Tensor<S> dcols({ckk2, npix2});
                MapM<S> dCm(dcols.data.data(), ckk2, npix2);
                CMapM<S> Wm(wt2.data.data(), Cout2, ckk2);
                dCm.noalias() = Wm.transpose() * dY;
                detail::col2im_add(dcols.data.data(), Cin2, H2, W2, k2, stride, pad, Ho2, Wo2,
                                   g.grad_buf(x).data.data());
            }
        };
        return id;
    }

    /// Group normalization over (C,H,W) with per-channel affine parameters.
    V group_norm(V x, V gamma, V beta, int groups, S eps) {
        const auto& xt = value(x);
        if (xt.rank() != 3) throw std::invalid_argument("group_norm: rank-3 input required");
        const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
        if (groups <= 0 || C % groups != 0)
            throw std::invalid_argument("group_norm: channels not divisible by groups");
        const auto& gt = value(gamma);
        const auto& bt = value(beta);
        if (gt.rank() != 1 || gt.dim(0) != C || bt.rank() != 1 || bt.dim(0) != C)
            throw std::invalid_argument("group_norm: affine shape mismatch");
        const int cg = C / groups;
        const std::size_t hw = static_cast<std::size_t>(H) * W;
        const std::size_t m = static_cast<std::size_t>(cg) * hw;

        Tensor<S> out({C, H, W});
        for (int g = 0; g < groups; ++g) {
            const S* xs = xt.data.data() + static_cast<std::size_t>(g) * m;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += static_cast<double>(xs[i]);
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double dv = static_cast<double>(xs[i]) - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(m);
            const S mu = static_cast<S>(mean);
            const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            S* ys = out.data.data() + static_cast<std::size_t>(g) * m;
            for (int c = 0; c < cg; ++c) {
                const S ga = gt.data[static_cast<std::size_t>(g) * cg + c];
                const S be = bt.data[static_cast<std::size_t>(g) * cg + c];
                for (std::size_t i = 0; i < hw; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(c) * hw + i;
                    ys[idx] = ga * (xs[idx] - mu) * istd + be;
                }
            }
        }
        V id = make_owned(std::move(out), {x, gamma, beta});
        nodes_[id].back = [x, gamma, beta, groups, eps, id](Graph& g) {
            const auto& xt2 = g.value(x);
            const int C2 = xt2.dim(0), H2 = xt2.dim(1), W2 = xt2.dim(2);
            const int cg2 = C2 / groups;
            const std::size_t hw2 = static_cast<std::size_t>(H2) * W2;
            const std::size_t m2 = static_cast<std::size_t>(cg2) * hw2;
            const auto& gy = g.nodes_[id].grad;
            const auto& gt2 = g.value(gamma);
            Tensor<S>* dx = g.tracked(x) ? &g.grad_buf(x) : nullptr;
            Tensor<S>* dgamma = g.tracked(gamma) ? &g.grad_buf(gamma) : nullptr;
            Tensor<S>* dbeta = g.tracked(beta) ? &g.grad_buf(beta) : nullptr;
            std::vector<S> xhat(m2), dxhat(m2);
            for (int grp = 0; grp < groups; ++grp) {
                const S* xs = xt2.data.data() + static_cast<std::size_t>(grp) * m2;
                const S* dys = gy.data.data() + static_cast<std::size_t>(grp) * m2;
                double mean = 0.0;
                for (std::size_t i = 0; i < m2; ++i) mean += static_cast<double>(xs[i]);
                mean /= static_cast<double>(m2);
                double var = 0.0;
                for (std::size_t i = 0; i < m2; ++i) {
                    const double dv = static_cast<double>(xs[i]) - mean;
                    var += dv * dv;
                }
                var /= static_cast<double>(m2);
                const S mu = static_cast<S>(mean);
                const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
                for (int c = 0; c < cg2; ++c) {
                    const S ga = gt2.data[static_cast<std::size_t>(grp) * cg2 + c];
                    for (std::size_t i = 0; i < hw2; ++i) {
                        const std::size_t idx = static_cast<std::size_t>(c) * hw2 + i;
                        xhat[idx] = (xs[idx] - mu) * istd;
                        dxhat[idx] = dys[idx] * ga;
                    }
                }
                if (dgamma || dbeta) {
                    for (int c = 0; c < cg2; ++c) {
                        double sg = 0.0, sb = 0.0;
                        for (std::size_t i = 0; i < hw2; ++i) {
                            const std::size_t idx = static_cast<std::size_t>(c) * hw2 + i;
                            sg += static_cast<double>(dys[idx]) * static_cast<double>(xhat[idx]);
                            sb += static_cast<double>(dys[idx]);
                        }
                        const std::size_t ch = static_cast<std::size_t>(grp) * cg2 + c;
                        if (dgamma) dgamma->data[ch] += static_cast<S>(sg);
                        if (dbeta) dbeta->data[ch] += static_cast<S>(sb);
                    }
                }
                if (dx) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t i = 0; i < m2; ++i) {
                        s1 += static_cast<double>(dxhat[i]);
                        s2 += static_cast<double>(dxhat[i]) * static_cast<double>(xhat[i]);
                    }
                    const S mean_dxhat = static_cast<S>(s1 / static_cast<double>(m2));
                    const S mean_dxhat_xhat = static_cast<S>(s2 / static_cast<double>(m2));
                    S* dxs = dx->data.data() + static_cast<std::size_t>(grp) * m2;
                    for (std::size_t i = 0; i < m2; ++i)
                        dxs[i] += istd * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                }
            }
        };
        return id;
    }

    V silu(V x) {
        const auto& xt = value(x);
        Tensor<S> out;
        out.shape = xt.shape;
        out.data.resize(xt.data.size());
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const S sg = detail::sigmoid(xt.data[i]);
            out.data[i] = xt.data[i] * sg;
        }
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& xt2 = g.value(x);
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            for (std::size_t i = 0; i < dx.data.size(); ++i) {
                const S sg = detail::sigmoid(xt2.data[i]);
                dx.data[i] += gy.data[i] * sg * (S(1) + xt2.data[i] * (S(1) - sg));
            }
        };
        return id;
    }

    V add(V a, V b) { return add_scaled(a, b, S(1)); }

    /// a + alpha * b, elementwise over identical shapes (any rank).
    V add_scaled(V a, V b, S alpha) {
        const auto& at = value(a);
        const auto& bt = value(b);
        require_same_shape(at, bt, "add");
        Tensor<S> out;
        out.shape = at.shape;
        out.data.resize(at.data.size());
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = at.data[i] + alpha * bt.data[i];
        V id = make_owned(std::move(out), {a, b});
        nodes_[id].back = [a, b, alpha, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            if (g.tracked(a)) {
                auto& da = g.grad_buf(a);
                for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += gy.data[i];
            }
            if (g.tracked(b)) {
                auto& db = g.grad_buf(b);
                for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] += alpha * gy.data[i];
            }
        };
        return id;
    }

    /// x (C,H,W) + bias (C) broadcast over spatial positions.
    V add_channel_bias(V x, V bias) {
        const auto& xt = value(x);
        const auto& bt = value(bias);
        if (xt.rank() != 3 || bt.rank() != 1 || bt.dim(0) != xt.dim(0))
            throw std::invalid_argument("add_channel_bias: shape mismatch");
        const std::size_t hw = static_cast<std::size_t>(xt.dim(1)) * xt.dim(2);
        Tensor<S> out;
        out.shape = xt.shape;
        out.data.resize(xt.data.size());
        for (int c = 0; c < xt.dim(0); ++c)
            for (std::size_t i = 0; i < hw; ++i)
                out.data[c * hw + i] = xt.data[c * hw + i] + bt.data[static_cast<std::size_t>(c)];
        V id = make_owned(std::move(out), {x, bias});
        nodes_[id].back = [x, bias, hw, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            const int C = g.value(x).dim(0);
            if (g.tracked(x)) {
                auto& dx = g.grad_buf(x);
                for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += gy.data[i];
            }
            if (g.tracked(bias)) {
                auto& db = g.grad_buf(bias);
                for (int c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < hw; ++i)
                        s += static_cast<double>(gy.data[c * hw + i]);
                    db.data[static_cast<std::size_t>(c)] += static_cast<S>(s);
                }
            }
        };
        return id;
    }

    V concat_ch(V a, V b) {
        const auto& at = value(a);
        const auto& bt = value(b);
        if (at.rank() != 3 || bt.rank() != 3 || at.dim(1) != bt.dim(1) || at.dim(2) != bt.dim(2))
            throw std::invalid_argument("concat_ch: spatial dims mismatch");
        Tensor<S> out({at.dim(0) + bt.dim(0), at.dim(1), at.dim(2)});
        std::copy(at.data.begin(), at.data.end(), out.data.begin());
        std::copy(bt.data.begin(), bt.data.end(), out.data.begin() + at.data.size());
        V id = make_owned(std::move(out), {a, b});
        const std::size_t na = at.data.size();
        nodes_[id].back = [a, b, na, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            if (g.tracked(a)) {
                auto& da = g.grad_buf(a);
                for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += gy.data[i];
            }
            if (g.tracked(b)) {
                auto& db = g.grad_buf(b);
                for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] += gy.data[na + i];
            }
        };
        return id;
    }

    /// Nearest-neighbor 2x upsampling.
    V upsample2(V x) {
        const auto& xt = value(x);
        if (xt.rank() != 3) throw std::invalid_argument("upsample2: rank-3 input required");
        const int C = xt.dim(0), H = xt.dim(1), W = xt.dim(2);
        Tensor<S> out({C, 2 * H, 2 * W});
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const S v = xt.at(c, i, j);
                    out.at(c, 2 * i, 2 * j) = v;
                    out.at(c, 2 * i, 2 * j + 1) = v;
                    out.at(c, 2 * i + 1, 2 * j) = v;
                    out.at(c, 2 * i + 1, 2 * j + 1) = v;
                }
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            const int C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
            auto gat = [&](int c, int i, int j) {
                return gy.data[(static_cast<std::size_t>(c) * 2 * H + i) * 2 * W + j];
            };
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        dx.at(c, i, j) += gat(c, 2 * i, 2 * j) + gat(c, 2 * i, 2 * j + 1) +
                                          gat(c, 2 * i + 1, 2 * j) + gat(c, 2 * i + 1, 2 * j + 1);
        };
        return id;
    }

    /// (C,H,W) -> (H*W, C) position-major matrix for attention.
    V chw_to_nc(V x) {
        const auto& xt = value(x);
        if (xt.rank() != 3) throw std::invalid_argument("chw_to_nc: rank-3 input required");
        const int C = xt.dim(0);
        const int N = xt.dim(1) * xt.dim(2);
        Tensor<S> out({N, C});
        for (int c = 0; c < C; ++c)
            for (int n = 0; n < N; ++n)
                out.data[static_cast<std::size_t>(n) * C + c] =
                    xt.data[static_cast<std::size_t>(c) * N + n];
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, C, N, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            for (int c = 0; c < C; ++c)
                for (int n = 0; n < N; ++n)
                    dx.data[static_cast<std::size_t>(c) * N + n] +=
                        gy.data[static_cast<std::size_t>(n) * C + c];
        };
        return id;
    }

    /// (N, C) -> (C, h, w) with N == h*w.
    V nc_to_chw(V x, int h, int w) {
        const auto& xt = value(x);
        if (xt.rank() != 2 || xt.dim(0) != h * w)
            throw std::invalid_argument("nc_to_chw: shape mismatch");
        const int N = xt.dim(0), C = xt.dim(1);
        Tensor<S> out({C, h, w});
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                out.data[static_cast<std::size_t>(c) * N + n] =
                    xt.data[static_cast<std::size_t>(n) * C + c];
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, C, N, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    dx.data[static_cast<std::size_t>(n) * C + c] +=
                        gy.data[static_cast<std::size_t>(c) * N + n];
        };
        return id;
    }

    // ---- matrix / vector ops -------------------------------------------

    /// y = W x + b for a rank-1 x; W is (Dout, Din).
    V linear(V x, V w, V b) {
        const auto& xt = value(x);
        const auto& wt = value(w);
        const auto& bt = value(b);
        if (xt.rank() != 1 || wt.rank() != 2 || wt.dim(1) != xt.dim(0) || bt.rank() != 1 ||
            bt.dim(0) != wt.dim(0))
            throw std::invalid_argument("linear: shape mismatch");
        const int Dout = wt.dim(0), Din = wt.dim(1);
        Tensor<S> out({Dout});
        for (int o = 0; o < Dout; ++o) {
            double s = static_cast<double>(bt.data[static_cast<std::size_t>(o)]);
            const S* wr = wt.data.data() + static_cast<std::size_t>(o) * Din;
            for (int i = 0; i < Din; ++i)
                s += static_cast<double>(wr[i]) * static_cast<double>(xt.data[static_cast<std::size_t>(i)]);
            out.data[static_cast<std::size_t>(o)] = static_cast<S>(s);
        }
        V id = make_owned(std::move(out), {x, w, b});
        nodes_[id].back = [x, w, b, Dout, Din, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            const auto& xt2 = g.value(x);
            const auto& wt2 = g.value(w);
            if (g.tracked(w)) {
                auto& dw = g.grad_buf(w);
                for (int o = 0; o < Dout; ++o)
                    for (int i = 0; i < Din; ++i)
                        dw.data[static_cast<std::size_t>(o) * Din + i] +=
                            gy.data[static_cast<std::size_t>(o)] * xt2.data[static_cast<std::size_t>(i)];
            }
            if (g.tracked(b)) {
                auto& db = g.grad_buf(b);
                for (int o = 0; o < Dout; ++o)
                    db.data[static_cast<std::size_t>(o)] += gy.data[static_cast<std::size_t>(o)];
            }
            if (g.tracked(x)) {
                auto& dx = g.grad_buf(x);
                for (int o = 0; o < Dout; ++o) {
                    const S go = gy.data[static_cast<std::size_t>(o)];
                    const S* wr = wt2.data.data() + static_cast<std::size_t>(o) * Din;
                    for (int i = 0; i < Din; ++i) dx.data[static_cast<std::size_t>(i)] += go * wr[i];
                }
            }
        };
        return id;
    }

    /// C = A B with A (M,K), B (K,N).
    V matmul(V a, V b) {
        const auto& at = value(a);
        const auto& bt = value(b);
        if (at.rank() != 2 || bt.rank() != 2 || at.dim(1) != bt.dim(0))
            throw std::invalid_argument("matmul: shape mismatch");
        const int M = at.dim(0), K = at.dim(1), N = bt.dim(1);
        Tensor<S> out({M, N});
        {
            CMapM<S> A(at.data.data(), M, K);
            CMapM<S> B(bt.data.data(), K, N);
            MapM<S> C(out.data.data(), M, N);
            C.noalias() = A * B;
        }
        V id = make_owned(std::move(out), {a, b});
        nodes_[id].back = [a, b, M, K, N, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            CMapM<S> dC(gy.data.data(), M, N);
            if (g.tracked(a)) {
                CMapM<S> B(g.value(b).data.data(), K, N);
                MapM<S> dA(g.grad_buf(a).data.data(), M, K);
                dA.noalias() += dC * B.transpose();
            }
            if (g.tracked(b)) {
                CMapM<S> A(g.value(a).data.data(), M, K);
                MapM<S> dB(g.grad_buf(b).data.data(), K, N);
                dB.noalias() += A.transpose() * dC;
            }
        };
        return id;
    }

    /// C = A B^T with A (M,K), B (N,K). Used for projections and QK scores.
    V matmul_nt(V a, V b) {
        const auto& at = value(a);
        const auto& bt = value(b);
        if (at.rank() != 2 || bt.rank() != 2 || at.dim(1) != bt.dim(1))
            throw std::invalid_argument("matmul_nt: shape mismatch");
        const int M = at.dim(0), K = at.dim(1), N = bt.dim(0);
        Tensor<S> out({M, N});
        {
            CMapM<S> A(at.data.data(), M, K);
            CMapM<S> B(bt.data.data(), N, K);
            MapM<S> C(out.data.data(), M, N);
            C.noalias() = A * B.transpose();
        }
        V id = make_owned(std::move(out), {a, b});
        nodes_[id].back = [a, b, M, K, N, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            CMapM<S> dC(gy.data.data(), M, N);
            if (g.tracked(a)) {
                CMapM<S> B(g.value(b).data.data(), N, K);
                MapM<S> dA(g.grad_buf(a).data.data(), M, K);
                dA.noalias() += dC * B;
            }
            if (g.tracked(b)) {
                CMapM<S> A(g.value(a).data.data(), M, K);
                MapM<S> dB(g.grad_buf(b).data.data(), N, K);
                dB.noalias() += dC.transpose() * A;
            }
        };
        return id;
    }

    V softmax_rows(V x) {
        const auto& xt = value(x);
        if (xt.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 input required");
        const int M = xt.dim(0), N = xt.dim(1);
        Tensor<S> out({M, N});
        for (int r = 0; r < M; ++r) {
            const S* xr = xt.data.data() + static_cast<std::size_t>(r) * N;
            S* yr = out.data.data() + static_cast<std::size_t>(r) * N;
            S mx = xr[0];
            for (int j = 1; j < N; ++j) mx = std::max(mx, xr[j]);
            double sum = 0.0;
            for (int j = 0; j < N; ++j) {
                yr[j] = std::exp(xr[j] - mx);
                sum += static_cast<double>(yr[j]);
            }
            const S inv = static_cast<S>(1.0 / sum);
            for (int j = 0; j < N; ++j) yr[j] *= inv;
        }
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, M, N, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& y = g.value(id);
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            for (int r = 0; r < M; ++r) {
                const S* yr = y.data.data() + static_cast<std::size_t>(r) * N;
                const S* gr = gy.data.data() + static_cast<std::size_t>(r) * N;
                S* dr = dx.data.data() + static_cast<std::size_t>(r) * N;
                double dot = 0.0;
                for (int j = 0; j < N; ++j)
                    dot += static_cast<double>(gr[j]) * static_cast<double>(yr[j]);
                for (int j = 0; j < N; ++j)
                    dr[j] += yr[j] * (gr[j] - static_cast<S>(dot));
            }
        };
        return id;
    }

    /// Columns [c0, c1) of a rank-2 tensor.
    V slice_cols(V x, int c0, int c1) {
        const auto& xt = value(x);
        if (xt.rank() != 2 || c0 < 0 || c1 > xt.dim(1) || c0 >= c1)
            throw std::invalid_argument("slice_cols: bad range");
        const int M = xt.dim(0), N = xt.dim(1), W = c1 - c0;
        Tensor<S> out({M, W});
        for (int r = 0; r < M; ++r)
            std::copy(xt.data.begin() + static_cast<std::size_t>(r) * N + c0,
                      xt.data.begin() + static_cast<std::size_t>(r) * N + c1,
                      out.data.begin() + static_cast<std::size_t>(r) * W);
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, c0, M, N, W, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            for (int r = 0; r < M; ++r)
                for (int j = 0; j < W; ++j)
                    dx.data[static_cast<std::size_t>(r) * N + c0 + j] +=
                        gy.data[static_cast<std::size_t>(r) * W + j];
        };
        return id;
    }

    V concat_cols(const std::vector<V>& xs) {
        if (xs.empty()) throw std::invalid_argument("concat_cols: empty list");
        const int M = value(xs[0]).dim(0);
        int total = 0;
        for (V v : xs) {
            const auto& t = value(v);
            if (t.rank() != 2 || t.dim(0) != M)
                throw std::invalid_argument("concat_cols: row mismatch");
            total += t.dim(1);
        }
        Tensor<S> out({M, total});
        int off = 0;
        for (V v : xs) {
            const auto& t = value(v);
            const int w = t.dim(1);
            for (int r = 0; r < M; ++r)
                std::copy(t.data.begin() + static_cast<std::size_t>(r) * w,
                          t.data.begin() + static_cast<std::size_t>(r) * w + w,
                          out.data.begin() + static_cast<std::size_t>(r) * total + off);
            off += w;
        }
        V id = make_owned(std::move(out), xs);
        const std::vector<V> parts = xs;
        nodes_[id].back = [parts, M, total, id](Graph& g) {
            const auto& gy = g.nodes_[id].grad;
            int off = 0;
            for (V v : parts) {
                const int w = g.value(v).dim(1);
                if (g.tracked(v)) {
                    auto& dv = g.grad_buf(v);
                    for (int r = 0; r < M; ++r)
                        for (int j = 0; j < w; ++j)
                            dv.data[static_cast<std::size_t>(r) * w + j] +=
                                gy.data[static_cast<std::size_t>(r) * total + off + j];
                }
                off += w;
            }
        };
        return id;
    }

    V scale(V x, S c) {
        const auto& xt = value(x);
        Tensor<S> out;
        out.shape = xt.shape;
        out.data.resize(xt.data.size());
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * xt.data[i];
        V id = make_owned(std::move(out), {x});
        nodes_[id].back = [x, c, id](Graph& g) {
            if (!g.tracked(x)) return;
            const auto& gy = g.nodes_[id].grad;
            auto& dx = g.grad_buf(x);
            for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += c * gy.data[i];
        };
        return id;
    }

    /// Identity forward, gradient barrier backward.
    V detach(V x) {
        Tensor<S> copy = value(x);
        V id = make_owned(std::move(copy), {});
        nodes_[static_cast<std::size_t>(id)].track = false;
        return id;
    }

    // ---- reductions -----------------------------------------------------

    /// mean((a - b)^2) over all elements -> rank-0 scalar.
    V mean_sq_diff(V a, V b) {
        const auto& at = value(a);
        const auto& bt = value(b);
        require_same_shape(at, bt, "mean_sq_diff");
        const std::size_t n = at.data.size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dv = static_cast<double>(at.data[i]) - static_cast<double>(bt.data[i]);
            s += dv * dv;
        }
        V id = make_owned(Tensor<S>::scalar(static_cast<S>(s / static_cast<double>(n))), {a, b});
        nodes_[id].back = [a, b, n, id](Graph& g) {
            const S gl = g.nodes_[id].grad.data[0];
            const auto& at2 = g.value(a);
            const auto& bt2 = g.value(b);
            const S c = gl * S(2) / static_cast<S>(n);
            if (g.tracked(a)) {
                auto& da = g.grad_buf(a);
                for (std::size_t i = 0; i < n; ++i)
                    da.data[i] += c * (at2.data[i] - bt2.data[i]);
            }
            if (g.tracked(b)) {
                auto& db = g.grad_buf(b);
                for (std::size_t i = 0; i < n; ++i)
                    db.data[i] -= c * (at2.data[i] - bt2.data[i]);
            }
        };
        return id;
    }

    /// mean(|a - b|) over all elements -> rank-0 scalar. Subgradient 0 at 0.
    V mean_abs_diff(V a, V b) {
        const auto& at = value(a);
        const auto& bt = value(b);
        require_same_shape(at, bt, "mean_abs_diff");
        const std::size_t n = at.data.size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += std::abs(static_cast<double>(at.data[i]) - static_cast<double>(bt.data[i]));
        V id = make_owned(Tensor<S>::scalar(static_cast<S>(s / static_cast<double>(n))), {a, b});
        nodes_[id].back = [a, b, n, id](Graph& g) {
            const S gl = g.nodes_[id].grad.data[0];
            const auto& at2 = g.value(a);
            const auto& bt2 = g.value(b);
            const S c = gl / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S dv = at2.data[i] - bt2.data[i];
                const S sg = dv > S(0) ? S(1) : (dv < S(0) ? S(-1) : S(0));
                if (g.tracked(a)) g.grad_buf(a).data[i] += c * sg;
                if (g.tracked(b)) g.grad_buf(b).data[i] -= c * sg;
            }
        };
        return id;
    }

    // ---- backward -------------------------------------------------------

    /// Seeds d(loss)/d(loss) = seed and propagates through the tape.
    void backward(V loss, S seed = S(1)) {
        if (value(loss).numel() != 1)
            throw std::invalid_argument("backward: loss must be a scalar node");
        grad_buf(loss).data[0] += seed;
        for (int id = loss; id >= 0; --id) {
            auto& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.grad.empty() && n.back) n.back(*this);
        }
    }

    std::size_t size() const { return nodes_.size(); }

    bool tracked(V id) const { return nodes_[static_cast<std::size_t>(id)].track; }

    Tensor<S>& grad_buf(V id) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        const auto& v = value(id);
        if (n.grad.data.size() != v.numel()) {
            n.grad.shape = v.shape;
            n.grad.data.assign(v.numel(), S(0));
        }
        return n.grad;
    }

private:
    struct Node {
        Tensor<S> owned;
        const Tensor<S>* ext = nullptr;  // set for leaves referencing external storage
        Tensor<S> grad;
        bool track = true;
        std::function<void(Graph&)> back;
    };

    V make_owned(Tensor<S> t, std::vector<V> parents = {}) {
        Node n;
        n.owned = std::move(t);
        // An interior node participates in backward only if some parent does.
        bool track = parents.empty();
        for (V p : parents) track = track || tracked(p);
        n.track = track;
        nodes_.push_back(std::move(n));
        return static_cast<V>(nodes_.size() - 1);
    }

    V make_ref(const Tensor<S>* t) {
        Node n;
        n.ext = t;
        nodes_.push_back(std::move(n));
        return static_cast<V>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

}  // namespace mcddpm::nn
