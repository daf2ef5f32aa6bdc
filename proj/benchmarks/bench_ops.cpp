#include <benchmark/benchmark.h>

#include "mdfn/inception.hpp"
#include "mdfn/ops.hpp"

using namespace mdfn;

namespace {

Tensor random_input(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

static void ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  Rng rng(1);
  Tensor x = random_input({1, c, s, s}, 2);
  ConvParams p = ConvParams::create(c, c, 3, 1, 1, rng);
  for (auto _ : state) {
    Tensor y = conv2d(x, p);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * p.mult_adds(s, s));
}
BENCHMARK(ConvForward)->Args({32, 64})->Args({64, 32})->Args({128, 16})->Args({168, 8});

static void ConvForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  Rng rng(1);
  Tensor x = random_input({1, c, s, s}, 2).set_requires_grad(true);
  ConvParams p = ConvParams::create(c, c, 3, 1, 1, rng);
  for (auto _ : state) {
    x.zero_grad();
    p.weights.zero_grad();
    p.bias.zero_grad();
    Tensor loss = sum(conv2d(x, p));
    backward(loss);
    benchmark::DoNotOptimize(p.weights.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 3 * p.mult_adds(s, s));
}
BENCHMARK(ConvForwardBackward)->Args({64, 32})->Args({128, 16});

static void MaxPool(benchmark::State& state) {
  Tensor x = random_input({1, 64, 64, 64}, 3);
  for (auto _ : state) {
    Tensor y = max_pool2d(x, 2, 2);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(MaxPool);

static void SquareModuleForward(benchmark::State& state) {
  Rng rng(5);
  InceptionSpec spec;
  spec.kind = InceptionKind::Square;
  spec.in_channels = 172;
  spec.bottleneck_channels = 86;
  spec.branch_channels = 24;
  SharedBranchSet br = SharedBranchSet::create(spec, rng);
  Tensor x = random_input({1, 172, 4, 4}, 6);
  for (auto _ : state) {
    Tensor y = square_module(x, br, spec);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(SquareModuleForward);

static void CubicModuleForward(benchmark::State& state) {
  Rng rng(7);
  InceptionSpec spec;
  spec.kind = InceptionKind::Cubic;
  spec.in_channels = 128;
  spec.bottleneck_channels = 64;
  spec.branch_channels = 16;
  SharedBranchSet br = SharedBranchSet::create(spec, rng);
  Tensor x = random_input({1, 128, 8, 8}, 8);
  for (auto _ : state) {
    Tensor y = cubic_module(x, br, spec);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(CubicModuleForward);

BENCHMARK_MAIN();
