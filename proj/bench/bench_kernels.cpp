// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include <vector>

#include "bfr/kernels.hpp"
#include "bfr/rng.hpp"
#include "bfr/stunet.hpp"

namespace {

using namespace bfr;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

kernels::ConvDims conv_dims(benchmark::State& state) {
  kernels::ConvDims d;
  d.batch = 1;
  d.in_channels = 16;
  d.out_channels = 16;
  d.height = d.width = static_cast<std::size_t>(state.range(0));
  d.kernel = 3;
  d.pad = 1;
  return d;
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
  const auto d = conv_dims(state);
  const auto in = random_vec(d.in_channels * d.height * d.width, 1);
  const auto w = random_vec(d.out_channels * d.in_channels * 9, 2);
  const auto b = random_vec(d.out_channels, 3);
  std::vector<double> out(d.out_channels * d.out_height() * d.out_width());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv2d_forward(d, in, w, b, out);
    else
      kernels::serial::conv2d_forward(d, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_MatmulForward(benchmark::State& state) {
  kernels::MatmulDims d{static_cast<std::size_t>(state.range(0)), 64, 64};
  const auto x = random_vec(d.rows * d.inner, 1);
  const auto w = random_vec(d.inner * d.cols, 2);
  const auto b = random_vec(d.cols, 3);
  std::vector<double> y(d.rows * d.cols);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::matmul_forward(d, x, w, b, y);
    else
      kernels::serial::matmul_forward(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_FilterSeparable(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto src = random_vec(n * n, 1);
  const std::vector<double> k(11, 1.0 / 11.0);
  std::vector<double> dst(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::filter_separable(n, n, src, k, k, dst);
    else
      kernels::serial::filter_separable(n, n, src, k, k, dst);
    benchmark::DoNotOptimize(dst.data());
  }
}

void BM_StunetForward(benchmark::State& state) {
  stunet::Config c;
  c.height = c.width = static_cast<std::size_t>(state.range(0));
  c.window_size = 4;
  const auto w = stunet::build(c, 1);
  ImageTensor img(c.width, c.height, 3, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(stunet::restore(w, img).data.data());
}

}  // namespace

BENCHMARK(BM_Conv2dForward<false>)->Name("conv2d/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_Conv2dForward<true>)->Name("conv2d/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_MatmulForward<false>)->Name("matmul/serial")->Arg(1024)->Arg(4096);
BENCHMARK(BM_MatmulForward<true>)->Name("matmul/parallel")->Arg(1024)->Arg(4096);
BENCHMARK(BM_FilterSeparable<false>)->Name("filter/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_FilterSeparable<true>)->Name("filter/parallel")->Arg(128)->Arg(512);
BENCHMARK(BM_StunetForward)->Name("stunet/restore")->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
