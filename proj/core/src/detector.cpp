#include "stormadapt/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stormadapt {

void Backbone::init(const ModelConfig& cfg, Rng& rng) {
  c1.init(3, cfg.ch1, 3, 2, 1, rng);
  c2.init(cfg.ch1, cfg.ch2, 3, 2, 1, rng);
  c3.init(cfg.ch2, cfg.ch3, 3, 2, 1, rng);
  c4.init(cfg.ch3, cfg.feat_ch, 3, 1, 1, rng);
}

const Tensor& Backbone::forward(const Tensor& image, Trace& trace) {
  trace.x0 = image;
  trace.h1 = c1.forward(trace.x0);
  trace.a1 = relu_forward(trace.h1);
  trace.h2 = c2.forward(trace.a1);
  trace.a2 = relu_forward(trace.h2);
  trace.h3 = c3.forward(trace.a2);
  trace.a3 = relu_forward(trace.h3);
  trace.h4 = c4.forward(trace.a3);
  trace.features = relu_forward(trace.h4);
  return trace.features;
}

void Backbone::backward(Trace& trace) {
  relu_backward(trace.h4, trace.features);
  c4.backward(trace.a3, trace.h4);
  relu_backward(trace.h3, trace.a3);
  c3.backward(trace.a2, trace.h3);
  relu_backward(trace.h2, trace.a2);
  c2.backward(trace.a1, trace.h2);
  relu_backward(trace.h1, trace.a1);
  c1.backward(trace.x0, trace.h1);
}

void Backbone::collect(std::vector<NamedParam>& out) {
  c1.collect(out, "backbone.c1");
  c2.collect(out, "backbone.c2");
  c3.collect(out, "backbone.c3");
  c4.collect(out, "backbone.c4");
}

void RpnHead::init(const ModelConfig& cfg, Rng& rng) {
  const int n_anchors = static_cast<int>(cfg.anchor_scales.size());
  conv.init(cfg.feat_ch, cfg.rpn_hidden, 3, 1, 1, rng);
  obj.init(cfg.rpn_hidden, n_anchors, 1, 1, 0, rng);
  box.init(cfg.rpn_hidden, 4 * n_anchors, 1, 1, 0, rng);
}

void RpnHead::forward(const Tensor& features, Trace& trace) {
  trace.input = features;
  trace.input.zero_grad();
  trace.h = conv.forward(trace.input);
  trace.a = relu_forward(trace.h);
  trace.obj_logits = obj.forward(trace.a);
  trace.deltas = box.forward(trace.a);
}

void RpnHead::backward(Trace& trace, Tensor& features) {
  obj.backward(trace.a, trace.obj_logits);
  box.backward(trace.a, trace.deltas);
  relu_backward(trace.h, trace.a);
  conv.backward(trace.input, trace.h);
  for (std::size_t i = 0; i < features.size(); ++i)
    features.grad[i] += trace.input.grad[i];
}

void RpnHead::collect(std::vector<NamedParam>& out) {
  conv.collect(out, "rpn.conv");
  obj.collect(out, "rpn.obj");
  box.collect(out, "rpn.box");
}

void DetHead::init(const ModelConfig& cfg, Rng& rng) {
  fc1.init(cfg.pooled_dim(), 128, rng);
  cls.init(128, cfg.class_count + 1, rng);
  reg.init(128, 4, rng);
}

void DetHead::forward(const Tensor& pooled, Trace& trace) {
  trace.input = pooled;
  trace.input.zero_grad();
  trace.h1 = fc1.forward(trace.input);
  trace.a1 = relu_forward(trace.h1);
  trace.cls_logits = cls.forward(trace.a1);
  trace.box_deltas = reg.forward(trace.a1);
}

void DetHead::backward(Trace& trace) {
  cls.backward(trace.a1, trace.cls_logits);
  reg.backward(trace.a1, trace.box_deltas);
  relu_backward(trace.h1, trace.a1);
  fc1.backward(trace.input, trace.h1);
}

void DetHead::collect(std::vector<NamedParam>& out) {
  fc1.collect(out, "head.fc1");
  cls.collect(out, "head.cls");
  reg.collect(out, "head.reg");
}

std::vector<Box> make_anchors(const ModelConfig& cfg) {
  const int fs = cfg.feat_size();
  std::vector<Box> anchors;
  anchors.reserve(cfg.anchor_scales.size() * fs * fs);
  for (std::size_t a = 0; a < cfg.anchor_scales.size(); ++a) {
    const real half = cfg.anchor_scales[a] / 2.0;
    for (int y = 0; y < fs; ++y) {
      for (int x = 0; x < fs; ++x) {
        const real cx = (x + 0.5) * cfg.stride;
        const real cy = (y + 0.5) * cfg.stride;
        anchors.push_back({cx - half, cy - half, cx + half, cy + half});
      }
    }
  }
  return anchors;
}

std::array<real, 4> encode_deltas(const Box& anchor, const Box& target) {
  const real aw = anchor.width(), ah = anchor.height();
  const real acx = anchor.x_min + aw / 2, acy = anchor.y_min + ah / 2;
  const real tw = target.width(), th = target.height();
  const real tcx = target.x_min + tw / 2, tcy = target.y_min + th / 2;
  return {(tcx - acx) / aw, (tcy - acy) / ah, std::log(tw / aw),
          std::log(th / ah)};
}

Box decode_deltas(const Box& anchor, const std::array<real, 4>& deltas) {
  const real aw = anchor.width(), ah = anchor.height();
  const real acx = anchor.x_min + aw / 2, acy = anchor.y_min + ah / 2;
  const real cx = acx + std::clamp(deltas[0], -2.0, 2.0) * aw;
  const real cy = acy + std::clamp(deltas[1], -2.0, 2.0) * ah;
  const real w = aw * std::exp(std::clamp(deltas[2], -3.0, 3.0));
  const real h = ah * std::exp(std::clamp(deltas[3], -3.0, 3.0));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Box clip_box(const Box& b, int image_size) {
  const real s = static_cast<real>(image_size);
  return {std::clamp(b.x_min, 0.0, s), std::clamp(b.y_min, 0.0, s),
          std::clamp(b.x_max, 0.0, s), std::clamp(b.y_max, 0.0, s)};
}

std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<real>& scores, real iou_threshold) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] >
           scores[static_cast<std::size_t>(b)];
  });
  std::vector<int> kept;
  std::vector<bool> suppressed(boxes.size(), false);
  for (int i : order) {
    if (suppressed[static_cast<std::size_t>(i)]) continue;
    kept.push_back(i);
    for (int j : order) {
      if (j == i || suppressed[static_cast<std::size_t>(j)]) continue;
      if (iou(boxes[static_cast<std::size_t>(i)],
              boxes[static_cast<std::size_t>(j)]) > iou_threshold)
        suppressed[static_cast<std::size_t>(j)] = true;
    }
  }
  return kept;
}

ProposalSet propose_regions(const RpnHead::Trace& rpn, const ModelConfig& cfg,
                            const std::vector<Box>& anchors, int cap) {
  ProposalSet out;
  if (cap <= 0) return out;
  const int fs = cfg.feat_size();
  const int cell_count = fs * fs;
  std::vector<Box> candidates;
  std::vector<real> scores;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const std::size_t a = i / static_cast<std::size_t>(cell_count);
    const std::size_t cell = i % static_cast<std::size_t>(cell_count);
    std::array<real, 4> d;
    for (int k = 0; k < 4; ++k)
      d[static_cast<std::size_t>(k)] =
          rpn.deltas.data[(4 * a + static_cast<std::size_t>(k)) *
                              static_cast<std::size_t>(cell_count) +
                          cell];
    Box b = clip_box(decode_deltas(anchors[i], d), cfg.image_size);
    if (b.width() < 2 || b.height() < 2) continue;
    candidates.push_back(b);
    scores.push_back(sigmoid(rpn.obj_logits.data[i]));
  }
  const std::vector<int> kept = nms(candidates, scores, cfg.rpn_nms_iou);
  for (int idx : kept) {
    if (static_cast<int>(out.boxes.size()) >= cap) break;
    out.boxes.push_back(candidates[static_cast<std::size_t>(idx)]);
    out.scores.push_back(scores[static_cast<std::size_t>(idx)]);
  }
  return out;
}

Tensor roi_pool(const Tensor& features, const Box& box_image_coords,
                const ModelConfig& cfg, RoiPoolTrace& trace) {
  const int ch = features.dim(0), fh = features.dim(1), fw = features.dim(2);
  const int p = cfg.roi_size;
  const real inv = 1.0 / cfg.stride;
  real x0 = std::clamp(box_image_coords.x_min * inv, 0.0, real(fw));
  real y0 = std::clamp(box_image_coords.y_min * inv, 0.0, real(fh));
  real x1 = std::clamp(box_image_coords.x_max * inv, 0.0, real(fw));
  real y1 = std::clamp(box_image_coords.y_max * inv, 0.0, real(fh));
  // degenerate boxes clamp to one feature cell
  if (x1 - x0 < 1.0) x1 = std::min(real(fw), x0 + 1.0), x0 = x1 - 1.0;
  if (y1 - y0 < 1.0) y1 = std::min(real(fh), y0 + 1.0), y0 = y1 - 1.0;

  Tensor pooled({ch, p, p});
  trace.argmax.assign(static_cast<std::size_t>(ch) * p * p, -1);
  const real bw = (x1 - x0) / p, bh = (y1 - y0) / p;
  for (int c = 0; c < ch; ++c) {
    for (int py = 0; py < p; ++py) {
      int ys = static_cast<int>(std::floor(y0 + py * bh));
      int ye = static_cast<int>(std::ceil(y0 + (py + 1) * bh));
      ys = std::clamp(ys, 0, fh - 1);
      ye = std::clamp(ye, ys + 1, fh);
      for (int px = 0; px < p; ++px) {
        int xs = static_cast<int>(std::floor(x0 + px * bw));
        int xe = static_cast<int>(std::ceil(x0 + (px + 1) * bw));
        xs = std::clamp(xs, 0, fw - 1);
        xe = std::clamp(xe, xs + 1, fw);
        real best = -std::numeric_limits<real>::infinity();
        int best_idx = -1;
        for (int y = ys; y < ye; ++y) {
          for (int x = xs; x < xe; ++x) {
            const int idx = (c * fh + y) * fw + x;
            if (features.data[static_cast<std::size_t>(idx)] > best) {
              best = features.data[static_cast<std::size_t>(idx)];
              best_idx = idx;
            }
          }
        }
        const std::size_t out_idx =
            (static_cast<std::size_t>(c) * p + py) * p + px;
        pooled.data[out_idx] = best;
        trace.argmax[out_idx] = best_idx;
      }
    }
  }
  return pooled;
}

void roi_pool_backward(Tensor& features, const RoiPoolTrace& trace,
                       const Tensor& pooled) {
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const int src = trace.argmax[i];
    if (src >= 0) features.grad[static_cast<std::size_t>(src)] += pooled.grad[i];
  }
}

real total_loss(LossBundle& bundle, real gamma, bool cross_camera) {
  const auto check = [](real v, const char* name) {
    if (std::isnan(v) || std::isinf(v))
      throw InternalError(std::string("non-finite loss component: ") + name);
  };
  check(bundle.l_cls, "L_cls");
  check(bundle.l_reg, "L_reg");
  check(bundle.l_img, "L_img");
  check(bundle.l_obj, "L_obj");
  check(bundle.lr_img, "LR_img");
  check(bundle.lr_obj, "LR_obj");
  if (cross_camera) bundle.lr_obj = 0;
  bundle.gamma = gamma;
  bundle.total =
      gamma * (bundle.l_img + bundle.l_obj + bundle.lr_img + bundle.lr_obj) +
      bundle.l_cls + bundle.l_reg;
  return bundle.total;
}

void Detector::init(const ModelConfig& config, std::uint64_t seed) {
  cfg = config;
  if (cfg.image_size % cfg.stride != 0)
    throw InputError("model: image_size must be divisible by the stride");
  Rng rng(derive_seed(seed, 0xdece57));
  backbone.init(cfg, rng);
  rpn.init(cfg, rng);
  head.init(cfg, rng);
  img_dom.init(cfg.feat_ch, cfg.img_head_hidden, rng);
  obj_dom.init(cfg.pooled_dim(), cfg.obj_head_hidden, rng);
  anchors = make_anchors(cfg);
}

std::vector<NamedParam> Detector::params() {
  std::vector<NamedParam> out;
  backbone.collect(out);
  rpn.collect(out);
  head.collect(out);
  img_dom.collect(out, "img_dom");
  obj_dom.collect(out, "obj_dom");
  return out;
}

Tensor image_to_tensor(const cv::Mat& image) {
  CV_Assert(image.type() == CV_32FC3);
  Tensor t({3, image.rows, image.cols});
  for (int y = 0; y < image.rows; ++y) {
    const cv::Vec3f* row = image.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.cols; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) = static_cast<real>(row[x][c]);
  }
  return t;
}

RpnTargets assign_rpn_targets(const std::vector<Box>& anchors,
                              const std::vector<Box>& gt_boxes) {
  RpnTargets t;
  t.labels.assign(anchors.size(), 0);
  t.deltas.assign(anchors.size(), {0, 0, 0, 0});
  if (gt_boxes.empty()) return t;

  std::vector<real> best_iou(anchors.size(), 0);
  std::vector<int> best_gt(anchors.size(), -1);
  std::vector<real> gt_best_iou(gt_boxes.size(), 0);
  std::vector<int> gt_best_anchor(gt_boxes.size(), -1);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const real v = iou(anchors[i], gt_boxes[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (best_iou[i] >= 0.5)
      t.labels[i] = 1;
    else if (best_iou[i] >= 0.3)
      t.labels[i] = -1;  // ignore band
  }
  // every ground truth claims its best anchor
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (gt_best_anchor[g] >= 0 && gt_best_iou[g] > 0.1) {
      const std::size_t i = static_cast<std::size_t>(gt_best_anchor[g]);
      t.labels[i] = 1;
      best_gt[i] = static_cast<int>(g);
    }
  }
  for (std::size_t i = 0; i < anchors.size(); ++i)
    if (t.labels[i] == 1)
      t.deltas[i] = encode_deltas(
          anchors[i], gt_boxes[static_cast<std::size_t>(best_gt[i])]);
  return t;
}

RoiTargets assign_roi_targets(const std::vector<Box>& proposals,
                              const std::vector<Box>& gt_boxes,
                              const std::vector<int>& gt_labels,
                              int class_count) {
  RoiTargets t;
  t.labels.assign(proposals.size(), class_count);  // background
  t.deltas.assign(proposals.size(), {0, 0, 0, 0});
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    real best = 0.5;
    int best_g = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const real v = iou(proposals[i], gt_boxes[g]);
      if (v >= best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      t.labels[i] = gt_labels[static_cast<std::size_t>(best_g)];
      t.deltas[i] = encode_deltas(
          proposals[i], gt_boxes[static_cast<std::size_t>(best_g)]);
    }
  }
  return t;
}

std::vector<Detection> detect(Detector& det, const cv::Mat& image,
                              real score_threshold, real nms_iou,
                              int max_dets) {
  const Tensor input = image_to_tensor(image);
  Backbone::Trace btrace;
  const Tensor& features = det.backbone.forward(input, btrace);
  RpnHead::Trace rtrace;
  det.rpn.forward(features, rtrace);
  const ProposalSet proposals =
      propose_regions(rtrace, det.cfg, det.anchors, det.cfg.proposal_cap);

  std::vector<Detection> all;
  for (const Box& prop : proposals.boxes) {
    RoiPoolTrace ptrace;
    const Tensor pooled = roi_pool(features, prop, det.cfg, ptrace);
    DetHead::Trace htrace;
    det.head.forward(pooled, htrace);
    const auto& logits = htrace.cls_logits.data;
    const real zmax = *std::max_element(logits.begin(), logits.end());
    real denom = 0;
    for (real z : logits) denom += std::exp(z - zmax);
    const std::array<real, 4> d = {htrace.box_deltas[0], htrace.box_deltas[1],
                                   htrace.box_deltas[2], htrace.box_deltas[3]};
    const Box refined = clip_box(decode_deltas(prop, d), det.cfg.image_size);
    if (!refined.valid()) continue;
    for (int c = 0; c < det.cfg.class_count; ++c) {
      const real conf = std::exp(logits[static_cast<std::size_t>(c)] - zmax) / denom;
      if (conf >= score_threshold) all.push_back({refined, c, conf});
    }
  }

  std::vector<Detection> out;
  for (int c = 0; c < det.cfg.class_count; ++c) {
    std::vector<Box> boxes;
    std::vector<real> scores;
    std::vector<Detection> cls_dets;
    for (const auto& dct : all) {
      if (dct.label != c) continue;
      boxes.push_back(dct.box);
      scores.push_back(dct.confidence);
      cls_dets.push_back(dct);
    }
    for (int idx : nms(boxes, scores, nms_iou))
      out.push_back(cls_dets[static_cast<std::size_t>(idx)]);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.confidence > b.confidence;
                   });
  if (static_cast<int>(out.size()) > max_dets) out.resize(static_cast<std::size_t>(max_dets));
  return out;
}

}  // namespace stormadapt
