// Microbenchmarks for the hot paths: backbone forward, ROI pooling, weather
// synthesis, full detection, and one training step.

#include <benchmark/benchmark.h>

#include "stormadapt/evalrun.hpp"
#include "stormadapt/toyscenes.hpp"
#include "stormadapt/trainer.hpp"
#include "stormadapt/weathergen.hpp"

using namespace stormadapt;

namespace {

AnnotatedImage fixed_scene() {
  Rng rng(13);
  return gen_scene(rng, SceneSpec{});
}

Detector fresh_detector() {
  Detector det;
  det.init(ModelConfig{}, 13);
  return det;
}

void BM_BackboneForward(benchmark::State& state) {
  Detector det = fresh_detector();
  const Tensor x = image_to_tensor(fixed_scene().image);
  Backbone::Trace tr;
  for (auto _ : state) benchmark::DoNotOptimize(det.backbone.forward(x, tr));
}
BENCHMARK(BM_BackboneForward);

void BM_RoiPool(benchmark::State& state) {
  Detector det = fresh_detector();
  const Tensor x = image_to_tensor(fixed_scene().image);
  Backbone::Trace tr;
  const Tensor& feat = det.backbone.forward(x, tr);
  const Box box{8, 8, 40, 40};
  RoiPoolTrace pt;
  for (auto _ : state)
    benchmark::DoNotOptimize(roi_pool(feat, box, det.cfg, pt));
}
BENCHMARK(BM_RoiPool);

void BM_FogSynthesis(benchmark::State& state) {
  const AnnotatedImage s = fixed_scene();
  const FogParams p = FogParams::for_level(Level::kLarge);
  for (auto _ : state) benchmark::DoNotOptimize(synth_fog(s.image, s.depth, p));
}
BENCHMARK(BM_FogSynthesis);

void BM_RainMap(benchmark::State& state) {
  RainSpec spec;
  spec.width = 64;
  spec.height = 64;
  Rng rng(13);
  for (auto _ : state) benchmark::DoNotOptimize(gen_rain_map(spec, rng));
}
BENCHMARK(BM_RainMap);

void BM_Detect(benchmark::State& state) {
  Detector det = fresh_detector();
  const AnnotatedImage s = fixed_scene();
  for (auto _ : state) benchmark::DoNotOptimize(detect(det, s.image));
}
BENCHMARK(BM_Detect);

void BM_TrainStep(benchmark::State& state) {
  Detector det = fresh_detector();
  Rng rng(13);
  const AlignedTriplet trip = build_triplet(gen_scene(rng, SceneSpec{}),
                                            Weather::kFog, 13);
  TripletTensors batch;
  batch.source = image_to_tensor(trip.source.image);
  batch.target = image_to_tensor(trip.target.image);
  batch.aux = image_to_tensor(trip.auxiliary.image);
  batch.gt_boxes = trip.source.boxes;
  batch.gt_labels = trip.source.labels;

  StepOptions opt;
  opt.flags = mode_flags("full");
  auto params = det.params();
  for (auto _ : state) {
    zero_grads(params);
    benchmark::DoNotOptimize(compute_losses(det, batch, opt));
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
