// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP batch gradient and evaluation on the toy model.
#include <benchmark/benchmark.h>

#include "ssp/config.hpp"
#include "ssp/data.hpp"
#include "ssp/parallel.hpp"

namespace {

using namespace ssp;

struct Fixture {
  RunConfig config;
  ModelParams params;
  std::vector<Tensor> videos;
  std::vector<const Tensor*> batch;
  std::vector<std::size_t> labels;
  std::vector<Tensor*> trainable;

  Fixture() : params(init_model(config.model, 0, config.beta_init)) {
    apply_freeze(params, config.policy, config.options);
    trainable = trainable_tensors(params);
    const SynthSpec spec = config.synth_spec();
    for (std::size_t i = 0; i < config.optim.batch_size; ++i) {
      videos.push_back(generate_sample(spec, i % spec.n_classes, i));
      labels.push_back(i % spec.n_classes);
    }
    for (const Tensor& v : videos) batch.push_back(&v);
  }

  BatchInput input() const { return {config.model, params, config.options, batch, labels}; }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_GradientSerial(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient_serial(f.input(), f.trainable));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.batch.size()));
}

void BM_GradientParallel(benchmark::State& state) {
  Fixture& f = fixture();
  const int threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient(f.input(), f.trainable, threads));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.batch.size()));
}

void BM_Evaluate(benchmark::State& state) {
  Fixture& f = fixture();
  const int threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_batch(f.input(), threads));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.batch.size()));
}

}  // namespace

BENCHMARK(BM_GradientSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientParallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
