#include "mcddpm/postprocess.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace mcddpm {

Volume median_filter_3d(const Volume& m, int kernel) {
    if (kernel < 1 || kernel % 2 == 0)
        throw std::invalid_argument("median_filter_3d: kernel must be odd and >= 1");
    if (kernel == 1) return m;
    const int rad = kernel / 2;
    const int win = kernel * kernel * kernel;
    Volume out(m.h, m.w, m.d);
    std::vector<float> buf(static_cast<std::size_t>(win));
    for (int s = 0; s < m.d; ++s) {
        for (int r = 0; r < m.h; ++r) {
            for (int c = 0; c < m.w; ++c) {
                int n = 0;
                for (int ds = -rad; ds <= rad; ++ds) {
                    const int ss = s + ds;
                    for (int dr = -rad; dr <= rad; ++dr) {
                        const int rr = r + dr;
                        for (int dc = -rad; dc <= rad; ++dc) {
                            const int cc = c + dc;
                            const bool in = ss >= 0 && ss < m.d && rr >= 0 && rr < m.h &&
                                            cc >= 0 && cc < m.w;
                            buf[static_cast<std::size_t>(n++)] = in ? m.at(rr, cc, ss) : 0.0f;
                        }
                    }
                }
                auto mid = buf.begin() + win / 2;
                std::nth_element(buf.begin(), mid, buf.end());
                out.at(r, c, s) = *mid;
            }
        }
    }
    return out;
}

BinaryMap brain_mask(const Volume& v) {
    BinaryMap m(v.h, v.w, v.d);
    for (std::size_t i = 0; i < v.data.size(); ++i) m.data[i] = v.data[i] > 0.0f ? 1 : 0;
    return m;
}

BinaryMap erode(const BinaryMap& mask, int iterations) {
    if (iterations < 0) throw std::invalid_argument("erode: iterations must be >= 0");
    BinaryMap cur = mask;
    for (int it = 0; it < iterations; ++it) {
        BinaryMap next(cur.h, cur.w, cur.d);
        for (int s = 0; s < cur.d; ++s) {
            for (int r = 0; r < cur.h; ++r) {
                for (int c = 0; c < cur.w; ++c) {
                    if (!cur.at(r, c, s)) continue;
                    const bool keep =
                        r > 0 && cur.at(r - 1, c, s) && r + 1 < cur.h && cur.at(r + 1, c, s) &&
                        c > 0 && cur.at(r, c - 1, s) && c + 1 < cur.w && cur.at(r, c + 1, s) &&
                        s > 0 && cur.at(r, c, s - 1) && s + 1 < cur.d && cur.at(r, c, s + 1);
                    next.at(r, c, s) = keep ? 1 : 0;
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

BinaryMap threshold_binarize(const Volume& m, const BinaryMap& mask, float theta) {
    if (m.h != mask.h || m.w != mask.w || m.d != mask.d)
        throw std::invalid_argument("threshold_binarize: mask dims mismatch");
    BinaryMap out(m.h, m.w, m.d);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        out.data[i] = (m.data[i] > theta && mask.data[i]) ? 1 : 0;
    return out;
}

PostprocessResult postprocess_anomaly_map(const AnomalyMap& residual, const Volume& input,
                                          const PostprocessParams& params) {
    require_same_dims(residual.data, input, "postprocess_anomaly_map");
    PostprocessResult res;
    res.filtered = median_filter_3d(residual, params.median_kernel);
    res.eval_mask = erode(brain_mask(input), params.erosion_iterations);
    res.segmentation = threshold_binarize(res.filtered, res.eval_mask, params.theta);
    return res;
}

}  // namespace mcddpm
