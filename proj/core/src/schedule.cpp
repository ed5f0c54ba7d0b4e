#include "mcddpm/schedule.hpp"

#include <stdexcept>

namespace mcddpm {

NoiseSchedule make_linear_schedule(int T) {
    if (T < 2) throw std::invalid_argument("make_linear_schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alphas.resize(static_cast<std::size_t>(T));
    s.alpha_bars.resize(static_cast<std::size_t>(T));
    const double span = kBetaEnd - kBetaStart;
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        double beta = kBetaStart + static_cast<double>(t - 1) / (T - 1) * span;
        if (t == 1) beta = kBetaStart;  // endpoints exact by construction
        if (t == T) beta = kBetaEnd;
        const std::size_t i = static_cast<std::size_t>(t - 1);
        s.betas[i] = beta;
        s.alphas[i] = 1.0 - beta;
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

PatchMask sample_patch_mask(int h, int w, int patch_h, int patch_w, RandomStream& rng) {
    if (patch_h <= 0 || patch_w <= 0)
        throw std::invalid_argument("sample_patch_mask: patch dimensions must be positive");
    if (patch_h > h || patch_w > w)
        throw std::invalid_argument("sample_patch_mask: patch larger than slice");
    PatchMask m;
    m.h = h;
    m.w = w;
    m.patch_h = patch_h;
    m.patch_w = patch_w;
    m.row0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - patch_h + 1)));
    m.col0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - patch_w + 1)));
    m.mask.assign(static_cast<std::size_t>(h) * w, 0);
    for (int r = m.row0; r < m.row0 + patch_h; ++r)
        for (int c = m.col0; c < m.col0 + patch_w; ++c)
            m.mask[static_cast<std::size_t>(r) * w + c] = 1;
    return m;
}

}  // namespace mcddpm
