#include "mcddpm/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mcddpm {

namespace {

double percentile_sorted(const std::vector<float>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= sorted.size()) return sorted.back();
    return static_cast<double>(sorted[i]) * (1.0 - frac) + static_cast<double>(sorted[i + 1]) * frac;
}

}  // namespace

NormalizeResult normalize_percentile(const Volume& v, double lo, double hi) {
    if (v.data.empty()) throw std::invalid_argument("normalize_percentile: empty volume");
    if (!(lo < hi)) throw std::invalid_argument("normalize_percentile: lo must be < hi");
    std::vector<float> nz;
    nz.reserve(v.data.size());
    for (float x : v.data)
        if (x != 0.0f) nz.push_back(x);
    NormalizeResult res;
    res.volume = Volume(v.h, v.w, v.d);
    if (nz.empty()) {
        res.constant_input = true;
        return res;
    }
    std::sort(nz.begin(), nz.end());
    const double p_lo = percentile_sorted(nz, lo);
    const double p_hi = percentile_sorted(nz, hi);
    if (p_hi <= p_lo) {
        res.constant_input = true;
        return res;
    }
    const double scale = 1.0 / (p_hi - p_lo);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double y = (static_cast<double>(v.data[i]) - p_lo) * scale;
        res.volume.data[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
    return res;
}

Volume preprocess_volume(const Volume& v, const PreprocessParams& params) {
    // tight nonzero bounding box
    int r0 = v.h, r1 = -1, c0 = v.w, c1 = -1, s0 = v.d, s1 = -1;
    for (int s = 0; s < v.d; ++s)
        for (int r = 0; r < v.h; ++r)
            for (int c = 0; c < v.w; ++c)
                if (v.at(r, c, s) != 0.0f) {
                    r0 = std::min(r0, r);
                    r1 = std::max(r1, r);
                    c0 = std::min(c0, c);
                    c1 = std::max(c1, c);
                    s0 = std::min(s0, s);
                    s1 = std::max(s1, s);
                }
    if (r1 < 0) throw std::invalid_argument("preprocess_volume: all-background volume");
    const int ch = r1 - r0 + 1, cw = c1 - c0 + 1, cd = s1 - s0 + 1;

    // 2x2x2 mean pooling over complete blocks
    const int oh = ch / 2, ow = cw / 2, od = cd / 2;
    if (oh < 1 || ow < 1 || od < 1)
        throw std::invalid_argument("preprocess_volume: volume too small to downsample");
    Volume half(oh, ow, od);
    for (int s = 0; s < od; ++s)
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double acc = 0.0;
                for (int ds = 0; ds < 2; ++ds)
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc)
                            acc += static_cast<double>(
                                v.at(r0 + 2 * r + dr, c0 + 2 * c + dc, s0 + 2 * s + ds));
                half.at(r, c, s) = static_cast<float>(acc / 8.0);
            }

    // transverse trim at half resolution
    const int trim = params.trim_slices;
    const int td = od - 2 * trim;
    if (td < 1)
        throw std::invalid_argument("preprocess_volume: volume smaller than trim amount");
    Volume trimmed(oh, ow, td);
    std::copy(half.data.begin() + static_cast<std::ptrdiff_t>(trim) * oh * ow,
              half.data.begin() + static_cast<std::ptrdiff_t>(trim + td) * oh * ow,
              trimmed.data.begin());

    return normalize_percentile(trimmed, params.percentile_lo, params.percentile_hi).volume;
}

}  // namespace mcddpm
