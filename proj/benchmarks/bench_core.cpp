#include <benchmark/benchmark.h>

#include "mcddpm/inference.hpp"
#include "mcddpm/model.hpp"
#include "mcddpm/postprocess.hpp"
#include "mcddpm/random.hpp"
#include "mcddpm/schedule.hpp"
#include "mcddpm/training.hpp"

using namespace mcddpm;

namespace {

ModelConfig bench_model_config(int width) {
    ModelConfig cfg;
    cfg.latent_channels = 4;
    cfg.bridge_width = width;
    cfg.base_width = width;
    cfg.depth = 3;
    cfg.attention_heads = 4;
    cfg.time_embed_dim = 64;
    return cfg;
}

void bm_make_schedule(benchmark::State& state) {
    for (auto _ : state) {
        auto s = make_linear_schedule(1000);
        benchmark::DoNotOptimize(s.alpha_bars.back());
    }
}
BENCHMARK(bm_make_schedule);

void bm_q_sample_full(benchmark::State& state) {
    const auto s = make_linear_schedule(1000);
    RandomStream rng(1);
    const auto x0 = rng.gaussian_tensor<float>({96, 96});
    const auto noise = rng.gaussian_tensor<float>({96, 96});
    for (auto _ : state) {
        auto xt = q_sample_full(x0, 500, s, noise);
        benchmark::DoNotOptimize(xt.data.data());
    }
}
BENCHMARK(bm_q_sample_full);

void bm_bridge_encode(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    ModelF model(bench_model_config(static_cast<int>(state.range(1))), 3);
    RandomStream rng(2);
    const auto x = rng.gaussian_tensor<float>({n, n});
    for (auto _ : state) {
        auto z = model.bridge_encode(x);
        benchmark::DoNotOptimize(z.data.data());
    }
}
BENCHMARK(bm_bridge_encode)->Args({64, 16})->Args({96, 32});

void bm_reconstruct_slice(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    ModelF model(bench_model_config(static_cast<int>(state.range(1))), 4);
    const auto schedule = make_linear_schedule(1000);
    RandomStream rng(3);
    auto x = rng.gaussian_tensor<float>({n, n});
    for (auto& v : x.data) v = 0.3f + 0.1f * v;
    InferenceConfig ic;
    ic.t_test = 500;
    for (auto _ : state) {
        auto rec = reconstruct_slice(model, schedule, x, ic, 0);
        benchmark::DoNotOptimize(rec.data.data());
    }
}
BENCHMARK(bm_reconstruct_slice)->Args({64, 16})->Args({96, 32})->Unit(benchmark::kMillisecond);

void bm_training_step(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    ModelF model(bench_model_config(static_cast<int>(state.range(1))), 5);
    TrainConfig tc;
    tc.lr = 1e-4;
    tc.batch_size = 8;
    tc.patch_sizes = {{n / 2, n / 2}};
    tc.seed = 7;
    Trainer trainer(model, tc);
    RandomStream rng(4);
    std::vector<Tensor<float>> batch;
    for (int i = 0; i < 8; ++i) {
        auto x = rng.gaussian_tensor<float>({n, n});
        for (auto& v : x.data) v = 0.3f + 0.1f * v;
        batch.push_back(std::move(x));
    }
    for (auto _ : state) {
        auto st = trainer.training_step(batch);
        benchmark::DoNotOptimize(st.loss);
    }
}
BENCHMARK(bm_training_step)->Args({64, 16})->Unit(benchmark::kMillisecond);

void bm_median_filter(benchmark::State& state) {
    RandomStream rng(5);
    Volume v(64, 64, 24);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform());
    for (auto _ : state) {
        auto out = median_filter_3d(v, 5);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(bm_median_filter)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
