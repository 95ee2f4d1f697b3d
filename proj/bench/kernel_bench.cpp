// Serial reference kernels against the OpenMP/Eigen kernels at the shapes the
// MNIST CNN trains with (batch 64).
#include <benchmark/benchmark.h>

#include "dnnshield/kernels.hpp"
#include "dnnshield/rng.hpp"

using namespace dnnshield;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 1.0);
  return t;
}

constexpr std::size_t kBatch = 64;

template <bool Serial>
void affine(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 1024}, 1);
  const auto w = random_tensor({512, 1024}, 2);
  const auto b = random_tensor({512}, 3);
  for (auto _ : st) {
    auto y = Serial ? reference::matmul_affine(x, w, b) : kernels::matmul_affine(x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * kBatch);
}

template <bool Serial>
void affine_backward(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 1024}, 1);
  const auto w = random_tensor({512, 1024}, 2);
  const auto g = random_tensor({kBatch, 512}, 3);
  for (auto _ : st) {
    auto r = Serial ? reference::matmul_affine_backward(x, w, g) : kernels::matmul_affine_backward(x, w, g);
    benchmark::DoNotOptimize(r.dw.data());
  }
  st.SetItemsProcessed(st.iterations() * kBatch);
}

// Second convolution of the CNN: 32 -> 64 channels, 5x5 on 12x12.
template <bool Serial>
void conv(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 32, 12, 12}, 1);
  const auto f = random_tensor({64, 32, 5, 5}, 2);
  const auto b = random_tensor({64}, 3);
  for (auto _ : st) {
    auto y = Serial ? reference::conv2d(x, f, &b) : kernels::conv2d(x, f, &b);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * kBatch);
}

template <bool Serial>
void conv_backward(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 32, 12, 12}, 1);
  const auto f = random_tensor({64, 32, 5, 5}, 2);
  const auto g = random_tensor({kBatch, 64, 8, 8}, 3);
  for (auto _ : st) {
    auto r = Serial ? reference::conv2d_backward(x, f, g) : kernels::conv2d_backward(x, f, g);
    benchmark::DoNotOptimize(r.df.data());
  }
  st.SetItemsProcessed(st.iterations() * kBatch);
}

template <bool Serial>
void relu(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 32, 24, 24}, 1);
  for (auto _ : st) {
    auto y = Serial ? reference::relu(x) : kernels::relu(x);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetBytesProcessed(st.iterations() * x.size() * sizeof(double) * 2);
}

template <bool Serial>
void maxpool(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 32, 24, 24}, 1);
  for (auto _ : st) {
    auto r = Serial ? reference::maxpool2x2(x) : kernels::maxpool2x2(x);
    benchmark::DoNotOptimize(r.y.data());
  }
  st.SetItemsProcessed(st.iterations() * kBatch);
}

template <bool Serial>
void hadamard(benchmark::State& st) {
  const auto x = random_tensor({kBatch, 32, 24, 24}, 1);
  const auto k = random_tensor({32, 24, 24}, 2);
  const auto kb = random_tensor({kBatch, 32, 24, 24}, 2);
  for (auto _ : st) {
    auto y = Serial ? reference::elementwise_mul(x, kb) : kernels::scale_broadcast(x, k);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * kBatch);
}

}  // namespace

BENCHMARK(affine<true>)->Name("affine/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(affine<false>)->Name("affine/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(affine_backward<true>)->Name("affine_backward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(affine_backward<false>)->Name("affine_backward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(conv<true>)->Name("conv2d/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(conv<false>)->Name("conv2d/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<true>)->Name("conv2d_backward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward<false>)->Name("conv2d_backward/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(relu<true>)->Name("relu/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(relu<false>)->Name("relu/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(maxpool<true>)->Name("maxpool2x2/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(maxpool<false>)->Name("maxpool2x2/parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(hadamard<true>)->Name("hadamard/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(hadamard<false>)->Name("hadamard/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
