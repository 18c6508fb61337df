#pragma once

#include <string>
#include <vector>

#include "stormadapt/common.hpp"
#include "stormadapt/tensor.hpp"

namespace stormadapt {

struct Detection {
  Box box;
  int label = 0;
  real confidence = 0;
};

struct GroundTruth {
  Box box;
  int label = 0;
};

// Predictions and ground truth for one image.
struct ImageDetections {
  std::string image_id;
  std::vector<Detection> predictions;
  std::vector<GroundTruth> ground_truth;
};

using DetectionSet = std::vector<ImageDetections>;

real iou(const Box& a, const Box& b);

// All-point interpolated average precision for one class, IoU >= 0.5
// greedy matching in confidence order, one match per ground truth.
// Confidence ties break by (image id, box coordinates) for determinism.
// Returns false in *defined when the class has no ground truth.
real average_precision(const DetectionSet& set, int label, bool* defined);

struct EvalResult {
  std::vector<real> per_class_ap;   // NaN where undefined
  std::vector<bool> ap_defined;
  real map = 0;                     // mean over defined classes
};

EvalResult mean_ap(const DetectionSet& set, int class_count);

// Hard-example ranking: ah = L1 distance between aligned source/target
// features; smaller ah = harder, ranked first.
struct HardnessRecord {
  std::string sample_id;
  real ah = 0;
  int rank = 0;  // 1-based, ascending in ah
};

struct PairedFeatures {
  std::string sample_id;
  Tensor source;
  Tensor target;
};

std::vector<HardnessRecord> hardness_rank(
    const std::vector<PairedFeatures>& pairs);

}  // namespace stormadapt
