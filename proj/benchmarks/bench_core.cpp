#include <benchmark/benchmark.h>

#include "sstda/harness.hpp"

using namespace sstda;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

void BM_DilatedConvForward(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  const std::size_t F = 64;
  const auto x = Tensor::constant(random_matrix(T, F, 1));
  const auto w = Tensor::constant(random_matrix(3 * F, F, 2));
  const auto b = Tensor::constant(Matrix(1, F));
  for (auto _ : state) benchmark::DoNotOptimize(dilated_conv1d(x, w, b, 3, 8));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T));
}
BENCHMARK(BM_DilatedConvForward)->Arg(256)->Arg(1024)->Arg(4096);

void BM_DilatedConvBackward(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0));
  const std::size_t F = 64;
  const auto x = Tensor::parameter(random_matrix(T, F, 1));
  const auto w = Tensor::parameter(random_matrix(3 * F, F, 2));
  const auto b = Tensor::parameter(Matrix(1, F));
  for (auto _ : state) backward(sum(dilated_conv1d(x, w, b, 3, 8)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(T));
}
BENCHMARK(BM_DilatedConvBackward)->Arg(256)->Arg(1024)->Arg(4096);

ModelConfig bench_model(int filters) {
  ModelConfig c;
  c.num_stages = 4;
  c.da_stages = {2, 3};
  c.stage.layers = 10;
  c.stage.filters = filters;
  c.stage.num_classes = 11;
  c.input_dim = 64;
  return c;
}

void BM_StageForward(benchmark::State& state) {
  const Model model(bench_model(static_cast<int>(state.range(1))), 1);
  const auto x = Tensor::constant(random_matrix(static_cast<std::size_t>(state.range(0)), 64, 3));
  for (auto _ : state) benchmark::DoNotOptimize(stage_forward(x, model.stages()[0], 3));
}
BENCHMARK(BM_StageForward)->Args({512, 32})->Args({512, 64})->Args({2048, 64});

void BM_StageForwardBackward(benchmark::State& state) {
  Model model(bench_model(static_cast<int>(state.range(1))), 1);
  const auto x = Tensor::constant(random_matrix(static_cast<std::size_t>(state.range(0)), 64, 3));
  for (auto _ : state) {
    model.zero_grad();
    backward(sum(stage_forward(x, model.stages()[0], 3).logits));
  }
}
BENCHMARK(BM_StageForwardBackward)->Args({512, 32})->Args({512, 64})->Args({2048, 64});

void BM_TrainStep(benchmark::State& state) {
  SynthConfig sc;
  sc.feature_dim = 64;
  sc.source_videos = 1;
  sc.target_videos = 1;
  const auto corpus = generate_synthetic(sc, 4);
  TrainConfig cfg;
  cfg.model = bench_model(32);
  cfg.model.stage.num_classes = sc.num_classes;
  cfg.mode = static_cast<TrainMode>(state.range(0));
  Model model(cfg.model, 1);
  TrainState ts;
  ts.total_steps = 1000;
  const Video& src = corpus.source.videos.begin()->second;
  const Video& tgt = corpus.target.videos.begin()->second;
  const LabelMask mask(src.labels.size(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(src, mask, tgt, model, ts, cfg));
  state.SetLabel(to_string(cfg.mode));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Arg(2);

void BM_Evaluate(benchmark::State& state) {
  SynthConfig sc;
  sc.feature_dim = 64;
  const auto corpus = generate_synthetic(sc, 5);
  ModelConfig mc = bench_model(32);
  mc.stage.num_classes = sc.num_classes;
  const Model model(mc, 1);
  const auto videos = corpus.target.split("target");
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(model, videos, {}, static_cast<unsigned>(state.range(0))));
}
BENCHMARK(BM_Evaluate)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
