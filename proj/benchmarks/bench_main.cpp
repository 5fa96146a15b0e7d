#include <benchmark/benchmark.h>

#include <map>

#include "glassbox/features.hpp"
#include "glassbox/nn.hpp"
#include "glassbox/receptive_field.hpp"
#include "glassbox/rng.hpp"
#include "glassbox/synth.hpp"

using namespace glassbox;

namespace {

const synth::Dataset& small_dataset() {
  static const synth::Dataset d = [] {
    synth::DatasetSpec s;
    s.train_per_class = 4;
    s.test_per_class = 1;
    return synth::generate(s);
  }();
  return d;
}

void BM_Forward(benchmark::State& state) {
  const auto m = nn::Model::reference(8, 1);
  const auto& img = small_dataset().train.front().image;
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(m, img));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_Backproject(benchmark::State& state) {
  const auto m = nn::Model::reference(8, 1);
  const auto trace = nn::forward(m, small_dataset().train.front().image);
  // every element of one map active: the densest reverse pass
  Tensor masked(trace.conv_final().shape());
  for (std::size_t i = 0; i < 64; ++i) masked[i] = 1.0f;
  for (auto _ : state) benchmark::DoNotOptimize(rf::backproject(m, trace, masked));
}
BENCHMARK(BM_Backproject)->Unit(benchmark::kMillisecond);

void BM_ClassFrequent(benchmark::State& state) {
  Rng rng(3);
  std::map<std::size_t, std::vector<features::BinaryFeatureVector>> per_class;
  for (std::size_t c = 0; c < 8; ++c) {
    for (int i = 0; i < 100; ++i) {
      std::vector<std::uint8_t> bits(64);
      for (auto& b : bits) b = uniform01(rng) < 0.2 ? 1 : 0;
      per_class[c].emplace_back(std::move(bits), features::FeatureRole::activated);
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(features::class_frequent(per_class, 5));
}
BENCHMARK(BM_ClassFrequent);

}  // namespace
BENCHMARK_MAIN();
