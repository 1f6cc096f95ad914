#include <benchmark/benchmark.h>

#include "tfill/embed.hpp"
#include "tfill/ops.hpp"
#include "tfill/rng.hpp"

using namespace tfill;

static void BM_Matmul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = rng.normal_tensor({n, n}, 0.0, 1.0);
  Tensor b = rng.normal_tensor({n, n}, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n) * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_Conv2dForward(benchmark::State& state) {
  int size = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor x = rng.normal_tensor({1, 16, size, size}, 0.0, 1.0);
  Tensor w = rng.normal_tensor({16, 16, 3, 3}, 0.0, 0.1);
  Tensor b = Tensor::zeros({16});
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1).data().data());
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

static void BM_Conv2dTrainStep(benchmark::State& state) {
  int size = static_cast<int>(state.range(0));
  Rng rng(3);
  Tensor x = rng.normal_tensor({1, 16, size, size}, 0.0, 1.0, true);
  Tensor w = rng.normal_tensor({16, 16, 3, 3}, 0.0, 0.1, true);
  Tensor b = Tensor::zeros({16}, true);
  for (auto _ : state) {
    TapeScope scope;
    Tensor loss = reduce_sum(conv2d(x, w, b, 1, 1));
    backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dTrainStep)->Arg(16)->Arg(32);

static void BM_PartialConv(benchmark::State& state) {
  int size = static_cast<int>(state.range(0));
  Rng rng(4);
  Tensor x = rng.normal_tensor({1, 16, size, size}, 0.0, 1.0);
  Tensor w = rng.normal_tensor({16, 16, 2, 2}, 0.0, 0.1);
  Tensor b = Tensor::zeros({16});
  std::vector<double> mdata(static_cast<std::size_t>(size) * size);
  for (std::size_t i = 0; i < mdata.size(); ++i) mdata[i] = (i % 3 == 0) ? 0.0 : 1.0;
  Tensor m = Tensor::from_data({1, 1, size, size}, std::move(mdata));
  for (auto _ : state) {
    auto [f, nm] = partial_conv2d(x, m, w, b, 2);
    benchmark::DoNotOptimize(f.data().data());
  }
}
BENCHMARK(BM_PartialConv)->Arg(32)->Arg(64);

static void BM_Softmax(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(5);
  Tensor x = rng.normal_tensor({8, n, n}, 0.0, 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(x, 2).data().data());
  }
}
BENCHMARK(BM_Softmax)->Arg(16)->Arg(64);

BENCHMARK_MAIN();
