#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "mcddpm/data_io.hpp"
#include "mcddpm/errors.hpp"
#include "mcddpm/metrics.hpp"
#include "mcddpm/phantom.hpp"
#include "mcddpm/postprocess.hpp"
#include "mcddpm/preprocess.hpp"
#include "mcddpm/random.hpp"
#include "mcddpm/sampler.hpp"

using namespace mcddpm;

namespace {

Volume random_volume(int h, int w, int d, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    RandomStream rng(seed);
    Volume v(h, w, d);
    for (auto& x : v.data) x = lo + static_cast<float>(rng.uniform()) * (hi - lo);
    return v;
}

/// Naive full-sort median with zero padding; independent of the shipped
/// nth_element implementation.
Volume median_oracle(const Volume& m, int kernel) {
    const int rad = kernel / 2;
    Volume out(m.h, m.w, m.d);
    for (int s = 0; s < m.d; ++s)
        for (int r = 0; r < m.h; ++r)
            for (int c = 0; c < m.w; ++c) {
                std::vector<float> vals;
                for (int ds = -rad; ds <= rad; ++ds)
                    for (int dr = -rad; dr <= rad; ++dr)
                        for (int dc = -rad; dc <= rad; ++dc) {
                            const int ss = s + ds, rr = r + dr, cc = c + dc;
                            const bool in = ss >= 0 && ss < m.d && rr >= 0 && rr < m.h &&
                                            cc >= 0 && cc < m.w;
                            vals.push_back(in ? m.at(rr, cc, ss) : 0.0f);
                        }
                std::sort(vals.begin(), vals.end());
                out.at(r, c, s) = vals[vals.size() / 2];
            }
    return out;
}

BinaryMap erode_oracle(const BinaryMap& m) {
    BinaryMap out(m.h, m.w, m.d);
    auto at = [&](int r, int c, int s) -> int {
        if (r < 0 || r >= m.h || c < 0 || c >= m.w || s < 0 || s >= m.d) return 0;
        return m.at(r, c, s);
    };
    for (int s = 0; s < m.d; ++s)
        for (int r = 0; r < m.h; ++r)
            for (int c = 0; c < m.w; ++c)
                out.at(r, c, s) =
                    (at(r, c, s) && at(r - 1, c, s) && at(r + 1, c, s) && at(r, c - 1, s) &&
                     at(r, c + 1, s) && at(r, c, s - 1) && at(r, c, s + 1))
                        ? 1
                        : 0;
    return out;
}

/// Dumb AUPRC reference: for every distinct score, count TP/FP at >=tau and
/// accumulate precision * recall increments in descending-tau order.
double auprc_oracle(const std::vector<float>& scores, const std::vector<std::uint8_t>& truth) {
    std::vector<float> taus = scores;
    std::sort(taus.begin(), taus.end(), std::greater<float>());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    std::size_t total_pos = 0;
    for (auto t : truth) total_pos += t != 0;
    double area = 0.0, recall_prev = 0.0;
    for (float tau : taus) {
        std::size_t tp = 0, pp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= tau) {
                ++pp;
                tp += truth[i] != 0;
            }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(pp);
        area += (recall - recall_prev) * precision;
        recall_prev = recall;
    }
    return area;
}

}  // namespace

TEST_SUITE("median filter") {
    TEST_CASE("constant volumes are unchanged where the window fits") {
        // with zero padding, border voxels see padding values; the median of
        // constants argument applies to every voxel whose window is interior
        const Volume v(9, 9, 9, 0.37f);
        const auto out = median_filter_3d(v, 5);
        for (int s = 2; s <= 6; ++s)
            for (int r = 2; r <= 6; ++r)
                for (int c = 2; c <= 6; ++c) CHECK(out.at(r, c, s) == 0.37f);
    }

    TEST_CASE("an isolated spike is removed entirely") {
        Volume v(9, 9, 9, 0.0f);
        v.at(4, 4, 4) = 5.0f;
        const auto out = median_filter_3d(v, 3);
        for (float x : out.data) CHECK(x == 0.0f);
    }

    TEST_CASE("matches the sort-based oracle exactly on random 9x9x9 volumes") {
        for (int trial = 0; trial < 8; ++trial) {
            const auto v = random_volume(9, 9, 9, 100 + static_cast<std::uint64_t>(trial));
            const auto got = median_filter_3d(v, 5);
            const auto want = median_oracle(v, 5);
            for (std::size_t i = 0; i < v.data.size(); ++i) REQUIRE(got.data[i] == want.data[i]);
        }
    }

    TEST_CASE("kernel validation and identity") {
        const auto v = random_volume(4, 4, 4, 1);
        CHECK_THROWS_AS(median_filter_3d(v, 4), std::invalid_argument);
        CHECK_THROWS_AS(median_filter_3d(v, 0), std::invalid_argument);
        const auto same = median_filter_3d(v, 1);
        for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(same.data[i] == v.data[i]);
    }
}

TEST_SUITE("erosion and masking") {
    TEST_CASE("brain mask binarizes strictly positive voxels") {
        Volume v(3, 3, 3, 0.0f);
        v.at(1, 1, 1) = 0.5f;
        v.at(0, 0, 0) = -0.2f;
        const auto m = brain_mask(v);
        std::size_t sum = 0;
        for (auto x : m.data) sum += x;
        CHECK(sum == 1);
        CHECK(m.at(1, 1, 1) == 1);
    }

    TEST_CASE("iterations = 0 is the identity") {
        const auto v = random_volume(5, 5, 5, 2);
        const auto m = brain_mask(v);
        const auto e = erode(m, 0);
        for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(e.data[i] == m.data[i]);
    }

    TEST_CASE("solid 7x7x7 cube erodes to a solid 5x5x5 cube") {
        BinaryMap m(7, 7, 7, 1);
        const auto e = erode(m, 1);
        std::size_t sum = 0;
        for (auto x : e.data) sum += x;
        CHECK(sum == 125);
        for (int s = 1; s <= 5; ++s)
            for (int r = 1; r <= 5; ++r)
                for (int c = 1; c <= 5; ++c) CHECK(e.at(r, c, s) == 1);
    }

    TEST_CASE("erosion matches the oracle, shrinks monotonically, and composes") {
        RandomStream rng(55);
        for (int trial = 0; trial < 6; ++trial) {
            BinaryMap m(9, 9, 9);
            for (auto& x : m.data) x = rng.uniform() < 0.7 ? 1 : 0;
            const auto got = erode(m, 1);
            const auto want = erode_oracle(m);
            for (std::size_t i = 0; i < m.data.size(); ++i) REQUIRE(got.data[i] == want.data[i]);
            for (std::size_t i = 0; i < m.data.size(); ++i)
                CHECK(got.data[i] <= m.data[i]);  // output subset of input
            const auto two_then_one = erode(erode(m, 2), 1);
            const auto three = erode(m, 3);
            for (std::size_t i = 0; i < m.data.size(); ++i)
                REQUIRE(two_then_one.data[i] == three.data[i]);
        }
    }

    TEST_CASE("threshold respects theta and the mask") {
        Volume m(4, 4, 1, 0.0f);
        m.at(0, 0, 0) = 0.5f;
        m.at(1, 1, 0) = 0.15f;
        m.at(2, 2, 0) = 0.9f;
        BinaryMap mask(4, 4, 1, 1);
        mask.at(2, 2, 0) = 0;  // outside the brain mask stays 0
        const auto b = threshold_binarize(m, mask, 0.2f);
        CHECK(b.at(0, 0, 0) == 1);
        CHECK(b.at(1, 1, 0) == 0);
        CHECK(b.at(2, 2, 0) == 0);
        const auto none = threshold_binarize(m, mask, 1.0f);
        for (auto x : none.data) CHECK(x == 0);
    }
}

TEST_SUITE("metrics") {
    TEST_CASE("dice identities") {
        BinaryMap a(4, 4, 1), b(4, 4, 1);
        CHECK(dice(a, b) == 1.0);  // both empty
        a.at(0, 0, 0) = 1;
        CHECK(dice(a, b) == 0.0);  // one empty
        b.at(0, 0, 0) = 1;
        CHECK(dice(a, b) == 1.0);  // identical nonempty
        b.at(0, 0, 0) = 0;
        b.at(3, 3, 0) = 1;
        CHECK(dice(a, b) == 0.0);  // disjoint nonempty
    }

    TEST_CASE("dice evaluates the formula and is symmetric") {
        BinaryMap a(4, 4, 1), b(4, 4, 1);
        // |a| = 4, |b| = 4, intersection 2 -> 0.5
        a.at(0, 0, 0) = a.at(0, 1, 0) = a.at(1, 0, 0) = a.at(1, 1, 0) = 1;
        b.at(1, 0, 0) = b.at(1, 1, 0) = b.at(2, 0, 0) = b.at(2, 1, 0) = 1;
        CHECK(dice(a, b) == 0.5);
        CHECK(dice(a, b) == dice(b, a));
    }

    TEST_CASE("auprc on the worked example") {
        const std::vector<float> scores = {0.9f, 0.8f, 0.7f, 0.6f, 0.5f, 0.4f};
        const std::vector<std::uint8_t> truth = {1, 1, 0, 1, 0, 0};
        const double got = auprc_flat(scores, truth);
        CHECK(got == doctest::Approx(auprc_oracle(scores, truth)).epsilon(1e-15));
        CHECK(got == doctest::Approx(1.0 / 3.0 + 1.0 / 3.0 + 0.25).epsilon(1e-12));
    }

    TEST_CASE("perfect ranking gives 1.0; constant scores give prevalence") {
        std::vector<float> scores;
        std::vector<std::uint8_t> truth;
        for (int i = 0; i < 50; ++i) {
            scores.push_back(i < 10 ? 0.9f : 0.1f);
            truth.push_back(i < 10 ? 1 : 0);
        }
        CHECK(auprc_flat(scores, truth) == 1.0);

        const std::vector<float> flat(200, 0.5f);
        std::vector<std::uint8_t> t2(200, 0);
        for (int i = 0; i < 30; ++i) t2[static_cast<std::size_t>(i * 6)] = 1;
        CHECK(auprc_flat(flat, t2) == doctest::Approx(30.0 / 200.0).epsilon(1e-12));
    }

    TEST_CASE("auprc with no positives is an error") {
        const std::vector<float> scores = {0.1f, 0.2f};
        const std::vector<std::uint8_t> truth = {0, 0};
        CHECK_THROWS_AS(auprc_flat(scores, truth), metric_error);
    }

    TEST_CASE("auprc matches the exhaustive oracle on 1000 random instances") {
        RandomStream rng(777);
        for (int trial = 0; trial < 1000; ++trial) {
            const int n = 5 + static_cast<int>(rng.uniform_int(60));
            std::vector<float> scores(static_cast<std::size_t>(n));
            std::vector<std::uint8_t> truth(static_cast<std::size_t>(n));
            bool any = false;
            for (int i = 0; i < n; ++i) {
                // quantized scores force ties through the tie-handling path
                scores[static_cast<std::size_t>(i)] =
                    static_cast<float>(rng.uniform_int(12)) / 11.0f;
                truth[static_cast<std::size_t>(i)] = rng.uniform() < 0.3 ? 1 : 0;
                any = any || truth[static_cast<std::size_t>(i)];
            }
            if (!any) truth[0] = 1;
            REQUIRE(auprc_flat(scores, truth) == auprc_oracle(scores, truth));
        }
    }

    TEST_CASE("reconstruction error over brain voxels") {
        Volume v(4, 4, 2, 0.0f);
        v.at(0, 0, 0) = 0.5f;
        v.at(1, 1, 1) = 0.8f;
        Volume vh = v;
        CHECK(reconstruction_error(v, vh) == 0.0);
        vh.at(0, 0, 0) = 0.51f;
        vh.at(1, 1, 1) = 0.81f;
        CHECK(reconstruction_error(v, vh) == doctest::Approx(0.01).epsilon(1e-5));
        // brute-force mean over masked voxels
        const auto vr = random_volume(5, 5, 5, 9, 0.1f, 1.0f);
        const auto vr_hat = random_volume(5, 5, 5, 10, 0.0f, 1.0f);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < vr.data.size(); ++i)
            if (vr.data[i] > 0.0f) {
                sum += std::abs(static_cast<double>(vr.data[i]) -
                                static_cast<double>(vr_hat.data[i]));
                ++n;
            }
        CHECK(std::abs(reconstruction_error(vr, vr_hat) - sum / static_cast<double>(n)) <= 1e-12);
    }

    TEST_CASE("random Bernoulli masks at matched prevalence score near-prevalence dice") {
        // at ~4% prevalence, chance-level segmentation concentrates near 4%
        const double prevalence = 0.04;
        const int n = 32 * 32 * 32;
        RandomStream rng(31337);
        std::vector<std::uint8_t> truth(static_cast<std::size_t>(n));
        for (auto& t : truth) t = rng.uniform() < prevalence ? 1 : 0;
        double sum = 0.0;
        const int kTrials = 100;
        for (int trial = 0; trial < kTrials; ++trial) {
            std::vector<std::uint8_t> pred(static_cast<std::size_t>(n));
            for (auto& p : pred) p = rng.uniform() < prevalence ? 1 : 0;
            sum += dice_flat(pred, truth);
        }
        const double mean = sum / kTrials;
        CHECK(mean > 0.03);
        CHECK(mean < 0.05);
    }

    TEST_CASE("report rows serialize with the documented column order") {
        EvalReport rep;
        EvalRow row;
        row.dataset = "phantom";
        row.dice_pooled = 0.5;
        row.auprc_pooled = 0.6;
        row.recon_error = 0.0123;
        row.checkpoint_id = "ckpt";
        rep.rows.push_back(row);
        const auto csv = rep.to_csv();
        CHECK(csv.find("dataset,dice_pooled,dice_mean,auprc,recon_error,theta,p,checkpoint") !=
              std::string::npos);
        CHECK(csv.find("phantom,50.0000,na,60.0000,0.0123,0.2,2,ckpt") != std::string::npos);
    }
}

TEST_SUITE("preprocessing") {
    TEST_CASE("percentile normalization matches a sort-based oracle") {
        const auto v = random_volume(8, 8, 8, 77, 5.0f, 25.0f);
        const auto res = normalize_percentile(v, 1.0, 99.0);
        CHECK_FALSE(res.constant_input);

        std::vector<float> nz;
        for (float x : v.data)
            if (x != 0.0f) nz.push_back(x);
        std::sort(nz.begin(), nz.end());
        auto pct = [&](double q) {
            const double pos = q / 100.0 * static_cast<double>(nz.size() - 1);
            const auto i = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(i);
            return static_cast<double>(nz[i]) * (1 - frac) +
                   static_cast<double>(nz[std::min(i + 1, nz.size() - 1)]) * frac;
        };
        const double lo = pct(1.0), hi = pct(99.0);
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const double want =
                std::clamp((static_cast<double>(v.data[i]) - lo) / (hi - lo), 0.0, 1.0);
            REQUIRE(std::abs(static_cast<double>(res.volume.data[i]) - want) <= 1e-6);
        }
    }

    TEST_CASE("normalization pins the percentile targets and flags constants") {
        Volume ramp(1, 1, 101);
        for (int s = 0; s < 101; ++s) ramp.at(0, 0, s) = 1.0f + static_cast<float>(s);
        const auto res = normalize_percentile(ramp, 0.0, 100.0);
        CHECK(res.volume.at(0, 0, 0) == 0.0f);
        CHECK(res.volume.at(0, 0, 100) == 1.0f);

        const Volume flat(4, 4, 4, 3.0f);
        const auto c = normalize_percentile(flat, 1.0, 99.0);
        CHECK(c.constant_input);
        for (float x : c.volume.data) CHECK(x == 0.0f);
    }

    TEST_CASE("preprocess produces 96x96x80 from a full 192x192x220 volume") {
        Volume v(192, 192, 220, 0.0f);
        RandomStream rng(5);
        for (auto& x : v.data) x = 0.1f + static_cast<float>(rng.uniform());
        const auto out = preprocess_volume(v);
        CHECK(out.h == 96);
        CHECK(out.w == 96);
        CHECK(out.d == 80);
        for (float x : out.data) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }
    }

    TEST_CASE("degenerate preprocessing inputs are rejected") {
        const Volume empty(32, 32, 40, 0.0f);
        CHECK_THROWS_AS(preprocess_volume(empty), std::invalid_argument);
        Volume tiny(64, 64, 40, 0.5f);  // 20 half-res slices < 2*15 trim
        CHECK_THROWS_AS(preprocess_volume(tiny), std::invalid_argument);
    }
}

TEST_SUITE("slice sampling") {
    TEST_CASE("one slice per volume per epoch, partial batches allowed") {
        PhantomSpec spec;
        spec.train_volumes = 2;
        spec.val_volumes = 0;
        spec.test_volumes = 0;
        spec.test_healthy = 0;
        const auto records = generate_phantom_dataset(spec);
        const auto train = select_split(records, Split::kTrain);
        const auto plan = plan_epoch(train, 42);
        CHECK(plan.size() == 2);
        const auto batches = make_batches(plan, 8);
        CHECK(batches.size() == 1);
        CHECK(batches[0].size() == 2);
    }

    TEST_CASE("same epoch seed reproduces the plan") {
        PhantomSpec spec;
        spec.train_volumes = 6;
        spec.val_volumes = 0;
        spec.test_volumes = 0;
        spec.test_healthy = 0;
        const auto records = generate_phantom_dataset(spec);
        const auto train = select_split(records, Split::kTrain);
        const auto a = plan_epoch(train, 7);
        const auto b = plan_epoch(train, 7);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].record_index == b[i].record_index);
            CHECK(a[i].slice_index == b[i].slice_index);
        }
    }

    TEST_CASE("slice index histogram is uniform (chi-squared)") {
        PhantomSpec spec;
        spec.train_volumes = 4;
        spec.val_volumes = 0;
        spec.test_volumes = 0;
        spec.test_healthy = 0;
        spec.d = 20;
        const auto records = generate_phantom_dataset(spec);
        const auto train = select_split(records, Split::kTrain);
        std::vector<int> hist(20, 0);
        const int kEpochs = 10000;
        for (int e = 0; e < kEpochs; ++e)
            for (const auto& ref : plan_epoch(train, static_cast<std::uint64_t>(e)))
                ++hist[static_cast<std::size_t>(ref.slice_index)];
        const double expect = 4.0 * kEpochs / 20.0;
        double chi2 = 0.0;
        for (int v : hist) chi2 += (v - expect) * (v - expect) / expect;
        // 19 dof, p = 0.999 critical value ~ 43.8
        CHECK(chi2 < 43.8);
    }
}

TEST_SUITE("phantom dataset") {
    TEST_CASE("split contract and ground-truth exactness") {
        PhantomSpec spec;
        spec.train_volumes = 3;
        spec.val_volumes = 1;
        spec.test_volumes = 3;
        spec.test_healthy = 1;
        const auto records = generate_phantom_dataset(spec);
        REQUIRE(records.size() == 7);
        int unhealthy = 0;
        for (const auto& r : records) {
            if (r.split == Split::kTrain || r.split == Split::kVal)
                CHECK(r.healthy());
            if (r.ground_truth) {
                ++unhealthy;
                // marked voxels are inside the brain and hyperintense
                for (std::size_t i = 0; i < r.volume.data.size(); ++i)
                    if (r.ground_truth->data[i]) {
                        REQUIRE(r.volume.data[i] > 0.0f);
                        REQUIRE(r.volume.data[i] >= 0.55f);
                    }
            }
        }
        CHECK(unhealthy == 2);
    }

    TEST_CASE("prevalence lands in the configured band") {
        PhantomSpec spec;
        const auto records = generate_phantom_dataset(spec);
        const double prev = anomaly_prevalence(records);
        CHECK(prev >= spec.prevalence_min);
        CHECK(prev <= spec.prevalence_max);
    }

    TEST_CASE("fixed seed reproduces the dataset bitwise") {
        PhantomSpec spec;
        spec.train_volumes = 2;
        spec.val_volumes = 1;
        spec.test_volumes = 2;
        spec.test_healthy = 1;
        const auto a = generate_phantom_dataset(spec);
        const auto b = generate_phantom_dataset(spec);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].volume.data == b[i].volume.data);
            REQUIRE(a[i].ground_truth.has_value() == b[i].ground_truth.has_value());
            if (a[i].ground_truth)
                REQUIRE(a[i].ground_truth->data == b[i].ground_truth->data);
        }
    }

    TEST_CASE("zero-anomaly specs leave ground truth empty") {
        PhantomSpec spec;
        spec.train_volumes = 1;
        spec.val_volumes = 0;
        spec.test_volumes = 1;
        spec.test_healthy = 1;  // the only test volume stays healthy
        const auto records = generate_phantom_dataset(spec);
        for (const auto& r : records) CHECK(r.healthy());
    }
}

TEST_SUITE("volume io") {
    TEST_CASE("volume and mask round-trip through raw+sidecar files") {
        namespace fs = std::filesystem;
        const auto dir = fs::temp_directory_path() / "mcddpm_io_test";
        fs::create_directories(dir);
        const auto v = random_volume(6, 5, 4, 3);
        write_volume(dir / "vol", v);
        const auto v2 = read_volume(dir / "vol");
        REQUIRE(v2.h == 6);
        REQUIRE(v2.w == 5);
        REQUIRE(v2.d == 4);
        REQUIRE(v2.data == v.data);

        BinaryMap m(6, 5, 4);
        m.at(2, 2, 2) = 1;
        write_mask(dir / "mask", m);
        const auto m2 = read_mask(dir / "mask");
        REQUIRE(m2.data == m.data);
        CHECK_THROWS_AS(read_volume(dir / "mask"), data_error);  // dtype mismatch
        fs::remove_all(dir);
    }

    TEST_CASE("manifest round-trip and ground-truth-in-train rejection") {
        namespace fs = std::filesystem;
        const auto dir = fs::temp_directory_path() / "mcddpm_manifest_test";
        fs::create_directories(dir);
        const auto v = random_volume(4, 4, 3, 8);
        write_volume(dir / "v0", v);
        BinaryMap gt(4, 4, 3);
        gt.at(1, 1, 1) = 1;
        write_mask(dir / "g0", gt);

        write_manifest(dir / "manifest.csv", {{"s0", Split::kTest, "v0", "g0"},
                                              {"s1", Split::kTrain, "v0", ""}});
        const auto records = load_dataset(dir / "manifest.csv");
        REQUIRE(records.size() == 2);
        CHECK(records[0].ground_truth.has_value());
        CHECK(records[1].healthy());

        write_manifest(dir / "bad.csv", {{"s0", Split::kTrain, "v0", "g0"}});
        CHECK_THROWS_AS(load_dataset(dir / "bad.csv"), data_error);
        fs::remove_all(dir);
    }
}
