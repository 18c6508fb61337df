#pragma once

#include <opencv2/core.hpp>
#include <optional>
#include <vector>

#include "stormadapt/daheads.hpp"
#include "stormadapt/evalkit.hpp"
#include "stormadapt/layers.hpp"
#include "stormadapt/metricreg.hpp"
#include "stormadapt/revgrad.hpp"

namespace stormadapt {

struct ModelConfig {
  int image_size = 64;
  int class_count = 3;
  // backbone channel plan, stride 8 overall
  int ch1 = 12, ch2 = 24, ch3 = 32, feat_ch = 48;
  int stride = 8;
  int roi_size = 7;
  int rpn_hidden = 48;
  std::vector<double> anchor_scales = {12, 20, 32};  // square anchors, pixels
  int proposal_cap = 12;        // K proposals after NMS
  double rpn_nms_iou = 0.7;
  int img_head_hidden = 256;
  int obj_head_hidden = 128;

  int feat_size() const { return image_size / stride; }
  int pooled_dim() const { return feat_ch * roi_size * roi_size; }
};

// Four conv blocks, stride 2/2/2/1; a desk-scale stand-in backbone.
struct Backbone {
  Conv2d c1, c2, c3, c4;

  struct Trace {
    Tensor x0, h1, a1, h2, a2, h3, a3, h4, features;
  };

  void init(const ModelConfig& cfg, Rng& rng);
  // image tensor is [3,H,W]; features come out [feat_ch, H/8, W/8].
  const Tensor& forward(const Tensor& image, Trace& trace);
  // consumes trace.features.grad; input-image grads are not propagated.
  void backward(Trace& trace);
  void collect(std::vector<NamedParam>& out);
};

struct RpnHead {
  Conv2d conv, obj, box;

  struct Trace {
    Tensor input, h, a, obj_logits, deltas;
  };

  void init(const ModelConfig& cfg, Rng& rng);
  void forward(const Tensor& features, Trace& trace);
  // consumes obj_logits.grad / deltas.grad, accumulates into features_grad.
  void backward(Trace& trace, Tensor& features);
  void collect(std::vector<NamedParam>& out);
};

struct DetHead {
  Linear fc1, cls, reg;

  struct Trace {
    Tensor input, h1, a1, cls_logits, box_deltas;
  };

  void init(const ModelConfig& cfg, Rng& rng);
  void forward(const Tensor& pooled, Trace& trace);
  void backward(Trace& trace);  // accumulates into trace.input.grad
  void collect(std::vector<NamedParam>& out);
};

// One square anchor box per (scale, feature cell).
std::vector<Box> make_anchors(const ModelConfig& cfg);

// Standard (dx, dy, dw, dh) box regression parametrization.
std::array<real, 4> encode_deltas(const Box& anchor, const Box& target);
Box decode_deltas(const Box& anchor, const std::array<real, 4>& deltas);
Box clip_box(const Box& b, int image_size);

// Greedy score-descending non-maximum suppression; returns kept indices.
std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<real>& scores, real iou_threshold);

struct ProposalSet {
  std::vector<Box> boxes;     // clipped, score-descending
  std::vector<real> scores;
};

// Decode + clip + NMS + cap. Proposal coordinates are detached: no gradient
// flows through box geometry.
ProposalSet propose_regions(const RpnHead::Trace& rpn, const ModelConfig& cfg,
                            const std::vector<Box>& anchors, int cap);

// Max pooling over a fixed roi_size x roi_size grid; argmax recorded for
// the backward scatter. Degenerate boxes are clamped to 1 px.
struct RoiPoolTrace {
  std::vector<int> argmax;  // flat feature index per output cell
};
Tensor roi_pool(const Tensor& features, const Box& box_image_coords,
                const ModelConfig& cfg, RoiPoolTrace& trace);
void roi_pool_backward(Tensor& features, const RoiPoolTrace& trace,
                       const Tensor& pooled);

// Eq-9 style loss bookkeeping for one iteration.
struct LossBundle {
  real l_cls = 0, l_reg = 0;
  real l_img = 0, l_obj = 0;
  real lr_img = 0, lr_obj = 0;
  real gamma = 0.1;
  real total = 0;
  real lambda_img = 0, lambda_obj = 0;  // reversal strengths actually used
  TripletDistances img_distances;       // for ordering-rate diagnostics
};

// total = gamma*(L_img + L_obj + LR_img + LR_obj) + L_cls + L_reg.
// cross_camera drops LR_obj. NaN in any part aborts, naming the part.
real total_loss(LossBundle& bundle, real gamma, bool cross_camera);

struct Detector {
  ModelConfig cfg;
  Backbone backbone;
  RpnHead rpn;
  DetHead head;
  ImageDomainClassifier img_dom;
  ObjectDomainClassifier obj_dom;
  std::vector<Box> anchors;

  void init(const ModelConfig& config, std::uint64_t seed);
  std::vector<NamedParam> params();
};

// [3,H,W] tensor from a CV_32FC3 image in [0,1].
Tensor image_to_tensor(const cv::Mat& image);

struct RpnTargets {
  std::vector<int> labels;  // 1 pos, 0 neg, -1 ignore, per anchor
  std::vector<std::array<real, 4>> deltas;  // valid where label == 1
};
RpnTargets assign_rpn_targets(const std::vector<Box>& anchors,
                              const std::vector<Box>& gt_boxes);

struct RoiTargets {
  std::vector<int> labels;  // class id, or class_count for background
  std::vector<std::array<real, 4>> deltas;
};
RoiTargets assign_roi_targets(const std::vector<Box>& proposals,
                              const std::vector<Box>& gt_boxes,
                              const std::vector<int>& gt_labels,
                              int class_count);

// Runs the full detector on one image and returns thresholded + per-class
// NMS-filtered detections.
std::vector<Detection> detect(Detector& det, const cv::Mat& image,
                              real score_threshold = 0.05,
                              real nms_iou = 0.5, int max_dets = 20);

}  // namespace stormadapt
