// OpenMP kernels against the serial reference on generator-sized layers.

#include <benchmark/benchmark.h>

#include <random>

#include "vstain/core/kernels.hpp"

using namespace vstain;

namespace {

Tensor<float> noise(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Args: channels, spatial size.
template <bool Parallel>
void conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const auto x = noise({1, c, n, n}, 1), w = noise({c, c, 3, 3}, 2), b = noise({1, c, 1, 1}, 3);
  Tensor<float> y;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_forward(x, w, &b, {1, 1, 0}, y);
    else reference::conv2d_forward(x, w, &b, {1, 1, 0}, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(n) * n * c * c * 9);
}

template <bool Parallel>
void conv_transpose(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const auto x = noise({1, c, n, n}, 4), w = noise({c, c / 2, 3, 3}, 5);
  Tensor<float> y;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv_transpose2d_forward<float>(x, w, nullptr, {2, 1, 1}, y);
    else reference::conv_transpose2d_forward<float>(x, w, nullptr, {2, 1, 1}, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void instance_norm(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const auto x = noise({4, c, n, n}, 6);
  Tensor<float> y, inv;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::instance_norm_forward(x, 1e-5f, y, inv);
    else reference::instance_norm_forward(x, 1e-5f, y, inv);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void reflect_pad(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const auto x = noise({4, c, n, n}, 7);
  Tensor<float> y;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::reflect_pad_forward(x, 3, y);
    else reference::reflect_pad_forward(x, 3, y);
    benchmark::DoNotOptimize(y.data());
  }
}

// Separable against direct 3D filtering of a CT stack; args: depth, side.
template <bool Parallel>
void gaussian3d(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  const auto x = noise({d, 1, n, n}, 8);
  Tensor<float> y;
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gaussian_filter3d(x, 1.0, 4.0, y);
    else reference::gaussian_filter3d(x, 1.0, 4.0, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(conv3x3<true>)->Name("conv3x3/kernel")->Args({8, 64})->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(conv3x3<false>)->Name("conv3x3/reference")->Args({8, 64})->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(conv_transpose<true>)->Name("conv_transpose/kernel")->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(conv_transpose<false>)->Name("conv_transpose/reference")->Args({32, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(instance_norm<true>)->Name("instance_norm/kernel")->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(instance_norm<false>)->Name("instance_norm/reference")->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(reflect_pad<true>)->Name("reflect_pad/kernel")->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(reflect_pad<false>)->Name("reflect_pad/reference")->Args({64, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(gaussian3d<true>)->Name("gaussian3d/kernel")->Args({16, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(gaussian3d<false>)->Name("gaussian3d/reference")->Args({16, 64})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
