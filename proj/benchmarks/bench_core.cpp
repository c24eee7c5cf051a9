#include <benchmark/benchmark.h>

#include "shd/attention.hpp"
#include "shd/oracle.hpp"
#include "shd/squeeze.hpp"
#include "shd/train.hpp"

using namespace shd;

namespace {

AttentionBundle make_bundle(std::size_t h, std::size_t n, std::size_t d_model) {
    Rng rng(1);
    AttentionBundle bundle;
    bundle.seq_len = n;
    for (std::size_t i = 0; i < h; ++i) {
        Matrix scores = Matrix::random_normal(n, n, rng, 2.0);
        bundle.maps.push_back(softmax_rows(scores, nullptr, 1.0));
        bundle.scores.push_back(std::move(scores));
        bundle.head_values.push_back(Matrix::random_normal(n, d_model, rng));
    }
    return bundle;
}

void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const Matrix a = Matrix::random_normal(n, n, rng);
    const Matrix b = Matrix::random_normal(n, n, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(16)->Arg(64)->Arg(128);

void bm_pairwise_alpha(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const AttentionBundle bundle = make_bundle(2, n, 64);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pairwise_alpha(bundle.maps[0], bundle.maps[1],
                                                bundle.head_values[0], bundle.head_values[1]));
    }
}
BENCHMARK(bm_pairwise_alpha)->Arg(16)->Arg(64)->Arg(256);

void bm_squeeze_fold(benchmark::State& state) {
    const auto heads = static_cast<std::size_t>(state.range(0));
    const AttentionBundle bundle = make_bundle(heads, 64, 64);
    MergePlan plan{partition_heads(heads, 2), MergeStrategy::Shd, 0};
    for (auto _ : state) {
        benchmark::DoNotOptimize(squeeze_heads(bundle, plan));
    }
}
BENCHMARK(bm_squeeze_fold)->Arg(8)->Arg(16)->Arg(25);

void bm_mha_forward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    const auto params = AttentionParams::random(64, 8, rng);
    const Matrix x = Matrix::random_normal(n, 64, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mha_forward(x, params, true));
    }
}
BENCHMARK(bm_mha_forward)->Arg(16)->Arg(64);

void bm_grid_oracle(benchmark::State& state) {
    const AttentionBundle bundle = make_bundle(2, 16, 16);
    for (auto _ : state) {
        benchmark::DoNotOptimize(grid_search_alpha(bundle.maps[0], bundle.maps[1],
                                                   bundle.head_values[0], bundle.head_values[1],
                                                   1e-2));
    }
}
BENCHMARK(bm_grid_oracle);

void bm_train_step(benchmark::State& state) {
    const TinyTransformerConfig cfg{16, 32, 4, 2, 16, true};
    const Dataset train_set = make_dataset(TaskKind::Copy, 4, 64, 16, 16);
    const Dataset val_set = make_dataset(TaskKind::Copy, 5, 4, 16, 16);
    for (auto _ : state) {
        TrainOptions opts;
        opts.steps = state.range(0);
        opts.seed = 6;
        opts.batch_size = 4;
        opts.val_every = 0;
        benchmark::DoNotOptimize(train_teacher(cfg, train_set, val_set, opts));
    }
}
BENCHMARK(bm_train_step)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
