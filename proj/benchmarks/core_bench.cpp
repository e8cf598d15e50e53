#include <benchmark/benchmark.h>

#include "freeevent/pipeline.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/toy_data.hpp"
#include "freeevent/train.hpp"

using namespace freeevent;

namespace {

struct Fixture {
  UNet net = UNet::initialize(UNetConfig{}, 3);
  ToyScenario sc = toy_ablation_scenario();
  PromptEmbedding prompt = embed_prompt(sc.target.token_ids, net.text_encoder());
  RunConfig cfg;
  NoiseSchedule s = cfg.noise_schedule();
  LatentTensor z = initial_latent(1, {3, 8, 8});
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

static void BM_DenoiseForward(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(denoise_forward(f.net, f.z, 500, f.prompt));
}
BENCHMARK(BM_DenoiseForward)->Unit(benchmark::kMillisecond);

static void BM_DenoiseForwardRecordAll(benchmark::State& state) {
  const Fixture& f = fixture();
  InterventionSet iv;
  for (const LayerAddress& a : f.net.attention_layers())
    for (Quantity q : {Quantity::f, Quantity::sa, Quantity::ca}) iv.record_at(a, q);
  for (auto _ : state) benchmark::DoNotOptimize(denoise_forward(f.net, f.z, 500, f.prompt, iv));
}
BENCHMARK(BM_DenoiseForwardRecordAll)->Unit(benchmark::kMillisecond);

static void BM_EnergyGradient(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(energy_and_gradient(f.z, 900, f.prompt, f.sc.entities, f.cfg.guidance, f.net));
}
BENCHMARK(BM_EnergyGradient)->Unit(benchmark::kMillisecond);

static void BM_DdimStep(benchmark::State& state) {
  const Fixture& f = fixture();
  const LatentTensor eps = initial_latent(2, f.z.shape());
  for (auto _ : state) benchmark::DoNotOptimize(ddim_step(f.z, eps, 500, 480, f.s));
}
BENCHMARK(BM_DdimStep);

static void BM_PrepareReference(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(reference_for(f.sc.reference.image, f.cfg, f.net, f.s));
}
BENCHMARK(BM_PrepareReference)->Unit(benchmark::kMillisecond);

static void BM_CustomizeAllOn(benchmark::State& state) {
  const Fixture& f = fixture();
  RunConfig c = f.cfg;
  c.sampling_steps = static_cast<int>(state.range(0));
  c.guidance.guidance_steps = c.sampling_steps / 5;
  const NoiseSchedule s = c.noise_schedule();
  for (auto _ : state) benchmark::DoNotOptimize(customize(f.sc.reference.image, f.sc.entities, f.prompt, c, f.net, s));
}
BENCHMARK(BM_CustomizeAllOn)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

static void BM_TrainSteps(benchmark::State& state) {
  const ToyDataset data = make_shapes_dataset(64, 1);
  TrainOptions opt;
  opt.steps = static_cast<int>(state.range(0));
  opt.autoencoder.stride = 2;
  for (auto _ : state) benchmark::DoNotOptimize(train_toy(data, opt));
  state.SetItemsProcessed(state.iterations() * opt.steps);
}
BENCHMARK(BM_TrainSteps)->Arg(20)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
