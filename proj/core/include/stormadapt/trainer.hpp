#pragma once

#include <map>
#include <optional>

#include "stormadapt/runconfig.hpp"

namespace stormadapt {

// One training batch: the source image with its labels, plus target and
// auxiliary images when the mode needs them. Target/auxiliary never carry
// ground truth into the loss (unsupervised contract).
struct TripletTensors {
  Tensor source;
  std::optional<Tensor> target;
  std::optional<Tensor> aux;
  std::vector<Box> gt_boxes;
  std::vector<int> gt_labels;
};

struct StepOptions {
  ModeFlags flags;
  AdvGrlConfig advgrl;
  real delta = 1.0;
  real gamma = 0.1;
  bool cross_camera = false;
  // Warm-up multiplier on the reversal strength (DANN-style schedule). The
  // domain classifiers always learn at full rate; only the reversed gradient
  // into the backbone is scaled, so detection features form before the
  // adversarial game reaches full strength.
  real adv_scale = 1.0;
  // Extra gain on the metric regularizer's feature gradients. The normalized
  // distance divides its gradient by the element count, which leaves the
  // hinge far too weak to reshape the feature geometry at the loss weight
  // the total uses; the training loop compensates here. Loss values are
  // reported unscaled.
  real reg_gain = 1.0;
  // When set, replaces RPN proposals (plus appended ground truth) with a
  // fixed box list; used by gradient checks to freeze the non-differentiable
  // proposal path.
  const std::vector<Box>* fixed_proposals = nullptr;
  bool with_grad = true;
};

// Full loss of one iteration. With with_grad set, parameter gradients are
// accumulated (call zero_grads first); otherwise this is a pure evaluation.
LossBundle compute_losses(Detector& det, const TripletTensors& batch,
                          const StepOptions& opt);

void zero_grads(std::vector<NamedParam>& params);

struct SgdOptimizer {
  real momentum = 0.9;
  real weight_decay = 0.0005;
  std::map<std::string, std::vector<real>> velocity;

  void step(std::vector<NamedParam>& params, real lr);
};

// Binary checkpoint: versioned header, named parameter blobs, optimizer
// velocity blobs, iteration counter, serialized RNG state.
void save_checkpoint(const std::string& path, Detector& det,
                     const SgdOptimizer& opt, int iter,
                     const std::string& rng_state);
struct CheckpointInfo {
  int iter = 0;
  std::string rng_state;
};
CheckpointInfo load_checkpoint(const std::string& path, Detector& det,
                               SgdOptimizer* opt);

// Manifest-backed triplet source with per-domain access counters (used to
// verify that source-only training never reads target/auxiliary images).
class TripletDataset {
 public:
  TripletDataset(const std::string& dataset_dir, const std::string& split);

  std::size_t size() const { return samples_.size(); }
  Weather target_weather() const { return manifest_.target_weather; }
  const SceneSpec& scene() const { return manifest_.scene; }
  const DatasetManifest& manifest() const { return manifest_; }

  const cv::Mat& clear(std::size_t i) const;
  const cv::Mat& target(std::size_t i) const;   // target weather, Large
  const cv::Mat& aux(std::size_t i) const;      // other weather, Large
  const cv::Mat& weather(std::size_t i, const std::string& key) const;
  const std::vector<Box>& boxes(std::size_t i) const;
  const std::vector<int>& labels(std::size_t i) const;
  const std::string& sample_id(std::size_t i) const;

  std::size_t clear_reads = 0, target_reads = 0, aux_reads = 0;

 private:
  DatasetManifest manifest_;
  std::vector<GeneratedSample> samples_;
  std::string target_key_, aux_key_;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  int iterations_run = 0;
  // dataset access counters, for the unsupervised-contract checks
  std::size_t clear_reads = 0, target_reads = 0, aux_reads = 0;
};

// Runs the configured schedule, writing metrics.csv, config snapshot and
// checkpoints under out_dir. With resume set, continues from the last
// checkpoint in out_dir if one exists. A positive stop_after ends the run
// after that many total iterations (checkpointing there), emulating an
// interrupted run that can later be resumed under the same config.
TrainResult train(const RunConfig& cfg, const std::string& out_dir,
                  bool resume = false, int stop_after = 0);

}  // namespace stormadapt
