#include <benchmark/benchmark.h>

#include "mdfn/loss.hpp"
#include "mdfn/network.hpp"
#include "mdfn/sgd.hpp"

using namespace mdfn;

namespace {

Tensor random_batch(int b, int s, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({b, 3, s, s});
  for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

}  // namespace

static void ModelForward(benchmark::State& state) {
  Model model(NetworkSpec::make(Variant::MdfnI2), 1);
  Tensor batch = random_batch(1, 64, 2);
  for (auto _ : state) {
    auto fwd = model.forward(batch);
    benchmark::DoNotOptimize(fwd.preds.back().data().data());
  }
  state.SetItemsProcessed(state.iterations() * model.mult_adds());
}
BENCHMARK(ModelForward);

static void TrainStep(benchmark::State& state) {
  Model model(NetworkSpec::make(Variant::MdfnI2), 1);
  Tensor batch = random_batch(8, 64, 3);
  std::vector<GroundTruthBox> gts = {{Box{0.4, 0.4, 0.3, 0.3}, 1},
                                     {Box{0.7, 0.7, 0.2, 0.2}, 2}};
  std::vector<MatchAssignment> as(8, match(model.default_boxes(), gts));
  std::vector<std::vector<GroundTruthBox>> all_gts(8, gts);
  auto params = model.params();
  SgdOptimizer opt(params, {0.001, 0.9, 0.0005});
  for (auto _ : state) {
    opt.zero_grad();
    auto fwd = model.forward(batch);
    auto loss = detection_loss(fwd.preds, model.default_boxes(), as, all_gts,
                               model.spec().num_classes);
    backward(loss.loss);
    opt.step();
    benchmark::DoNotOptimize(loss.report.total);
  }
}
BENCHMARK(TrainStep)->Unit(benchmark::kMillisecond);

static void Matching(benchmark::State& state) {
  Model model(NetworkSpec::make(Variant::MdfnI2), 1);
  Rng rng(4);
  std::vector<GroundTruthBox> gts;
  for (int g = 0; g < 5; ++g)
    gts.push_back({Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.4),
                       rng.uniform(0.1, 0.4)},
                   1 + g % 3});
  for (auto _ : state) {
    auto as = match(model.default_boxes(), gts);
    benchmark::DoNotOptimize(as.n_matched);
  }
}
BENCHMARK(Matching);

static void Inference(benchmark::State& state) {
  Model model(NetworkSpec::make(Variant::MdfnI2), 1);
  Tensor image = random_batch(1, 64, 5);
  Tensor single = Tensor::zeros({3, 64, 64});
  std::copy(image.data().begin(), image.data().end(), single.data().begin());
  EvalOptions opts;
  for (auto _ : state) {
    auto dets = run_inference(model, single, opts);
    benchmark::DoNotOptimize(dets.size());
  }
  state.SetLabel("forward + decode + nms");
}
BENCHMARK(Inference)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
