#include <benchmark/benchmark.h>

#include <random>

#include "apm/losses.hpp"

using namespace apm;

namespace {

std::vector<double> random_cosines(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::vector<double> c(n);
  for (auto& v : c) v = u(rng);
  return c;
}

PhonemePosteriors random_posteriors(std::size_t frames, std::size_t classes, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Mat p(frames, classes);
  for (std::size_t t = 0; t < frames; ++t) {
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += (p(t, k) = e(rng));
    for (std::size_t k = 0; k < classes; ++k) p(t, k) /= sum;
  }
  return PhonemePosteriors(std::move(p));
}

void BM_FixedMargin(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto cos = random_cosines(static_cast<std::size_t>(state.range(0)), rng);
  const auto spec = state.range(1) ? MarginSpec::aam(0.2) : MarginSpec::am(0.2);
  for (auto _ : state) benchmark::DoNotOptimize(margin_loss(cos, spec, 0));
}
BENCHMARK(BM_FixedMargin)->ArgsProduct({{6, 64, 1024}, {0, 1}});

void BM_ASoftmax(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto cos = random_cosines(static_cast<std::size_t>(state.range(0)), rng);
  const auto spec = MarginSpec::a_softmax(4);
  for (auto _ : state) benchmark::DoNotOptimize(a_softmax_loss(3.0, cos, spec, 0));
}
BENCHMARK(BM_ASoftmax)->Arg(6)->Arg(1024);

// Cost is dominated by the posterior scan: T frames x C_p classes.
void BM_PhonemeAware(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto cos = random_cosines(6, rng);
  const auto post = random_posteriors(static_cast<std::size_t>(state.range(0)), 40, rng);
  const auto spec = state.range(1) ? MarginSpec::apam(0.2, 10.0) : MarginSpec::apm(0.2, 10.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(state.range(1) ? apam_softmax_loss(cos, post, spec, 0)
                                            : apm_softmax_loss(cos, post, spec, 0));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PhonemeAware)->ArgsProduct({{30, 150, 1000}, {0, 1}});

}  // namespace
