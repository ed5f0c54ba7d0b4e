#include "mcddpm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mcddpm/random.hpp"

namespace mcddpm {

namespace {

struct Ellipsoid {
    double cr, cc, cs;  // center (row, col, slice)
    double ar, ac, as;  // semi-axes

    double radius(double r, double c, double s) const {
        const double x = (r - cr) / ar, y = (c - cc) / ac, z = (s - cs) / as;
        return std::sqrt(x * x + y * y + z * z);
    }
};

struct HealthyDraw {
    Ellipsoid brain, ventricle;
    double wm_inner, wm_outer;   // white-matter shell in normalized radius
    float base, ventricle_val, wm_val;
    double wobble_amp, wobble_phase;
    double field_a[3], field_b[3];  // low-frequency intensity field
};

HealthyDraw draw_healthy(const PhantomSpec& spec, RandomStream& rng) {
    HealthyDraw hd;
    auto jitter = [&](double lo, double hi) { return lo + rng.uniform() * (hi - lo); };
    hd.brain = {spec.h / 2.0 + jitter(-1.5, 1.5), spec.w / 2.0 + jitter(-1.5, 1.5),
                spec.d / 2.0 + jitter(-0.5, 0.5), 0.40 * spec.h * jitter(0.94, 1.06),
                0.44 * spec.w * jitter(0.94, 1.06), 0.48 * spec.d * jitter(0.94, 1.04)};
    hd.ventricle = {hd.brain.cr + jitter(-1.0, 1.0), hd.brain.cc + jitter(-1.0, 1.0),
                    hd.brain.cs + jitter(-0.5, 0.5), 0.16 * spec.h * jitter(0.8, 1.2),
                    0.12 * spec.w * jitter(0.8, 1.2), 0.30 * spec.d * jitter(0.8, 1.2)};
    hd.wm_inner = jitter(0.42, 0.50);
    hd.wm_outer = jitter(0.70, 0.78);
    hd.base = spec.base_intensity +
              static_cast<float>(jitter(-spec.intensity_jitter, spec.intensity_jitter));
    hd.ventricle_val = static_cast<float>(jitter(0.10, 0.16));
    hd.wm_val = hd.base + static_cast<float>(jitter(0.10, 0.16));
    hd.wobble_amp = jitter(0.5, 1.5);
    hd.wobble_phase = jitter(0.0, 6.28318);
    for (int i = 0; i < 3; ++i) {
        hd.field_a[i] = jitter(-0.03, 0.03);
        hd.field_b[i] = jitter(0.0, 6.28318);
    }
    return hd;
}

Volume render_healthy(const PhantomSpec& spec, const HealthyDraw& hd, RandomStream& rng) {
    Volume v(spec.h, spec.w, spec.d);
    for (int s = 0; s < spec.d; ++s) {
        // per-slice in-plane wobble gives a mild through-plane deformation
        const double wob =
            hd.wobble_amp * std::sin(2.0 * 3.14159265 * s / spec.d + hd.wobble_phase);
        for (int r = 0; r < spec.h; ++r) {
            for (int c = 0; c < spec.w; ++c) {
                const double rr = r + wob, cc = c - wob;
                const double rho = hd.brain.radius(rr, cc, s);
                if (rho > 1.0) continue;  // background stays exactly zero
                float val = hd.base;
                if (rho >= hd.wm_inner && rho <= hd.wm_outer) val = hd.wm_val;
                if (hd.ventricle.radius(rr, cc, s) <= 1.0) val = hd.ventricle_val;
                const double field =
                    hd.field_a[0] * std::sin(2.0 * 3.14159265 * r / spec.h + hd.field_b[0]) +
                    hd.field_a[1] * std::sin(2.0 * 3.14159265 * c / spec.w + hd.field_b[1]) +
                    hd.field_a[2] * std::sin(2.0 * 3.14159265 * s / spec.d + hd.field_b[2]);
                val += static_cast<float>(field);
                val += static_cast<float>(rng.gaussian()) * spec.noise_sigma;
                v.at(r, c, s) = std::clamp(val, 0.02f, 1.0f);
            }
        }
    }
    return v;
}

/// Adds hyperintense ellipsoid blobs until prevalence lands in the configured
/// range; each marked voxel receives the intensity offset exactly once.
BinaryMap add_anomalies(const PhantomSpec& spec, Volume& v, RandomStream& rng) {
    std::size_t brain_count = 0;
    for (float x : v.data) brain_count += x > 0.0f;

    BinaryMap gt(spec.h, spec.w, spec.d);
    for (int attempt = 0; attempt < 200; ++attempt) {
        BinaryMap trial(spec.h, spec.w, spec.d);
        const int n_blobs = spec.anomalies_min +
                            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                                spec.anomalies_max - spec.anomalies_min + 1)));
        std::vector<Ellipsoid> blobs;
        for (int b = 0; b < n_blobs; ++b) {
            Ellipsoid e;
            e.ar = spec.radius_min + rng.uniform() * (spec.radius_max - spec.radius_min);
            e.ac = spec.radius_min + rng.uniform() * (spec.radius_max - spec.radius_min);
            e.as = spec.radius_z_min + rng.uniform() * (spec.radius_z_max - spec.radius_z_min);
            if (2.0 * e.ar >= spec.h || 2.0 * e.ac >= spec.w || 2.0 * e.as >= spec.d)
                throw std::invalid_argument("phantom: anomaly radius exceeds image");
            // center well inside the tissue so erosion keeps the blob in play
            e.cr = spec.h / 2.0 + (rng.uniform() - 0.5) * 0.55 * spec.h * 0.5;
            e.cc = spec.w / 2.0 + (rng.uniform() - 0.5) * 0.55 * spec.w * 0.5;
            e.cs = spec.d / 2.0 + (rng.uniform() - 0.5) * 0.40 * spec.d * 0.5;
            blobs.push_back(e);
        }
        std::size_t marked = 0;
        for (int s = 0; s < spec.d; ++s)
            for (int r = 0; r < spec.h; ++r)
                for (int c = 0; c < spec.w; ++c) {
                    if (v.at(r, c, s) <= 0.0f) continue;
                    for (const auto& e : blobs)
                        if (e.radius(r, c, s) <= 1.0) {
                            if (!trial.at(r, c, s)) ++marked;
                            trial.at(r, c, s) = 1;
                        }
                }
        const double prev = static_cast<double>(marked) / static_cast<double>(brain_count);
        if (prev >= spec.prevalence_min && prev <= spec.prevalence_max) {
            const float offset = static_cast<float>(
                spec.offset_min + rng.uniform() * (spec.offset_max - spec.offset_min));
            for (std::size_t i = 0; i < v.data.size(); ++i)
                if (trial.data[i]) v.data[i] = std::min(1.0f, v.data[i] + offset);
            gt = std::move(trial);
            return gt;
        }
    }
    throw std::runtime_error("phantom: could not reach target prevalence; check spec ranges");
}

}  // namespace

std::vector<VolumeRecord> generate_phantom_dataset(const PhantomSpec& spec) {
    if (spec.train_volumes < 1 || spec.val_volumes < 0 || spec.test_volumes < 0)
        throw std::invalid_argument("phantom: invalid volume counts");
    if (spec.test_healthy > spec.test_volumes)
        throw std::invalid_argument("phantom: test_healthy exceeds test_volumes");
    if (2.0 * spec.radius_max >= spec.h || 2.0 * spec.radius_max >= spec.w ||
        2.0 * spec.radius_z_max >= spec.d)
        throw std::invalid_argument("phantom: anomaly radius exceeds image");

    std::vector<VolumeRecord> records;
    int serial = 0;
    auto make = [&](Split split, bool with_anomaly) {
        RandomStream rng(derive_seed(spec.seed, "phantom-volume", static_cast<std::uint64_t>(serial)));
        VolumeRecord rec;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "p%03d", serial);
        rec.subject_id = buf;
        rec.split = split;
        const HealthyDraw hd = draw_healthy(spec, rng);
        rec.volume = render_healthy(spec, hd, rng);
        if (with_anomaly) rec.ground_truth = add_anomalies(spec, rec.volume, rng);
        ++serial;
        records.push_back(std::move(rec));
    };

    for (int i = 0; i < spec.train_volumes; ++i) make(Split::kTrain, false);
    for (int i = 0; i < spec.val_volumes; ++i) make(Split::kVal, false);
    for (int i = 0; i < spec.test_volumes; ++i)
        make(Split::kTest, i >= spec.test_healthy);
    return records;
}

double anomaly_prevalence(const std::vector<VolumeRecord>& records) {
    std::size_t brain = 0, marked = 0;
    for (const auto& r : records) {
        if (!r.ground_truth) continue;
        for (std::size_t i = 0; i < r.volume.data.size(); ++i) {
            if (r.volume.data[i] > 0.0f) {
                ++brain;
                marked += r.ground_truth->data[i] != 0;
            }
        }
    }
    return brain == 0 ? 0.0 : static_cast<double>(marked) / static_cast<double>(brain);
}

}  // namespace mcddpm
