#include <benchmark/benchmark.h>

#include <random>

#include "eegc/cascade.hpp"
#include "eegc/metrics.hpp"
#include "eegc/signal.hpp"
#include "eegc/transformer.hpp"

using namespace eegc;

namespace {

std::vector<double> random_signal(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> x(static_cast<size_t>(n));
  for (auto& v : x) v = dist(rng);
  return x;
}

void BM_Attention(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> dist;
  auto mk = [&] {
    auto t = ag::Tensor::leaf({n, 16});
    for (auto& v : t->value) v = dist(rng);
    return t;
  };
  auto q = mk(), k = mk(), v = mk();
  for (auto _ : state) {
    ag::NoGradGuard guard;
    benchmark::DoNotOptimize(attention(q, k, v)->value.data());
  }
}
BENCHMARK(BM_Attention)->Arg(100)->Arg(400);

void BM_ForwardPaperPreset(benchmark::State& state) {
  const auto cfg = ModelConfig::paper_preset(100);
  const auto model = make_model(cfg, 3);
  const auto input = random_signal(100, 4);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, input).data());
}
BENCHMARK(BM_ForwardPaperPreset);

void BM_TrainStepToy(benchmark::State& state) {
  ModelConfig cfg;
  cfg.n_encoders = cfg.n_decoders = 2;
  cfg.d_qkv = 8;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.seq_len = 100;
  CascadeModel model = make_cascade(cfg, 5, true);
  std::vector<MaskedSegment> set;
  for (int i = 0; i < 16; ++i) {
    Segment seg;
    seg.samples = random_signal(100, 100 + static_cast<std::uint64_t>(i));
    set.push_back(apply_mask(seg, build_mask(100, 10, PositionMode::Middle)));
  }
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 1;
  tc.warmup_steps = 0;
  for (auto _ : state) train(model, set, {}, tc);
}
BENCHMARK(BM_TrainStepToy);

void BM_DftMagnitude(benchmark::State& state) {
  const auto x = random_signal(100, 6);
  for (auto _ : state)
    benchmark::DoNotOptimize(dft_magnitude(x, 50).data());
}
BENCHMARK(BM_DftMagnitude);

}  // namespace

BENCHMARK_MAIN();
