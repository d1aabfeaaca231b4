#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "mpls/blocks.hpp"
#include "mpls/lesions.hpp"
#include "mpls/metrics.hpp"
#include "mpls/preprocess.hpp"
#include "mpls/random.hpp"

namespace {

using namespace mpls;

Mask blobs(std::int64_t n, double p, std::uint64_t seed) {
  Rng rng(seed);
  Mask m({n, n, n});
  for (auto& v : m.values()) v = bernoulli(rng, p) ? 1 : 0;
  return m;
}

void BM_ConvNextForward(benchmark::State& state) {
  torch::NoGradGuard ng;
  torch::set_num_threads(1);
  const auto c = state.range(0);
  ConvNext3d block(c, BlockConfig{});
  block->eval();
  const auto x = torch::randn({1, c, 32, 32, 32});
  for (auto _ : state) benchmark::DoNotOptimize(block->forward(x));
}
BENCHMARK(BM_ConvNextForward)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_SurfaceDice(benchmark::State& state) {
  const auto n = state.range(0);
  Mask a({n, n, n}), b({n, n, n});
  for (std::int64_t z = n / 4; z < 3 * n / 4; ++z)
    for (std::int64_t y = n / 4; y < 3 * n / 4; ++y)
      for (std::int64_t x = n / 4; x < 3 * n / 4; ++x) {
        a(z, y, x) = 1;
        b(z, y, std::min(n - 1, x + 2)) = 1;
      }
  for (auto _ : state) benchmark::DoNotOptimize(surface_dice(a, b, {1, 1, 1}, 1.5));
}
BENCHMARK(BM_SurfaceDice)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ConnectedComponents(benchmark::State& state) {
  const auto m = blobs(state.range(0), 0.3, 7);
  for (auto _ : state) benchmark::DoNotOptimize(extract_lesions(m));
}
BENCHMARK(BM_ConnectedComponents)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Resample(benchmark::State& state) {
  const auto n = state.range(0);
  Volume v({n, n, n});
  Rng rng(3);
  for (auto& x : v.values()) x = static_cast<float>(uniform01(rng));
  const Vec3 from{2.0, 1.5, 1.5}, to{1.0, 1.0, 1.0};
  const auto out = resampled_dims(v.dims(), from, to);
  for (auto _ : state) benchmark::DoNotOptimize(resample(v, from, to, out, Interpolation::Linear));
}
BENCHMARK(BM_Resample)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
