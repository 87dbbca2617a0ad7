#include <benchmark/benchmark.h>

#include <random>

#include "apm/model.hpp"

using namespace apm;

namespace {

ModelConfig bench_config() {
  ModelConfig c;
  c.encoder.input_dim = 23;
  c.num_phonemes = 40;
  c.num_languages = 6;
  return c;
}

Segment random_segment(const ModelConfig& c, std::size_t frames) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<std::size_t> ph(0, c.num_phonemes - 1);
  Segment s;
  s.id = "bench";
  s.frames = Mat(frames, c.encoder.input_dim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (auto& v : s.frames.row(t)) v = g(rng);
    s.phonemes.push_back(ph(rng));
  }
  return s;
}

void BM_Forward(benchmark::State& state) {
  const auto c = bench_config();
  const auto p = init_params(c, 1, LossVariant::APMS);
  const auto seg = random_segment(c, static_cast<std::size_t>(state.range(0)));
  const auto spec = MarginSpec::apm(0.2, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(multi_task_loss(p, seg, spec, {1.0}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(50)->Arg(150);

void BM_Backward(benchmark::State& state) {
  const auto c = bench_config();
  const auto p = init_params(c, 1, LossVariant::APMS);
  const auto seg = random_segment(c, static_cast<std::size_t>(state.range(0)));
  const auto spec = MarginSpec::apm(0.2, 10.0);
  for (auto _ : state) benchmark::DoNotOptimize(backward(p, seg, spec, {1.0}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Backward)->Arg(50)->Arg(150);

void BM_Embedding(benchmark::State& state) {
  const auto c = bench_config();
  const auto p = init_params(c, 1);
  const auto seg = random_segment(c, 150);
  for (auto _ : state) benchmark::DoNotOptimize(extract_embedding(p, seg));
}
BENCHMARK(BM_Embedding);

}  // namespace
