#include "stormadapt/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <tuple>

namespace stormadapt {

real iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0;
  const real ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const real iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0;
  const real inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

namespace {

struct Pred {
  real confidence;
  std::size_t image_index;
  Box box;
  std::string image_id;
};

bool pred_order(const Pred& a, const Pred& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return std::tie(a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max) <
         std::tie(b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max);
}

}  // namespace

real average_precision(const DetectionSet& set, int label, bool* defined) {
  std::vector<Pred> preds;
  std::size_t n_gt = 0;
  std::vector<std::vector<bool>> gt_matched(set.size());
  std::vector<std::vector<std::size_t>> gt_index(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t g = 0; g < set[i].ground_truth.size(); ++g) {
      if (set[i].ground_truth[g].label == label) {
        gt_index[i].push_back(g);
        ++n_gt;
      }
    }
    gt_matched[i].assign(gt_index[i].size(), false);
    for (const auto& p : set[i].predictions)
      if (p.label == label)
        preds.push_back({p.confidence, i, p.box, set[i].image_id});
  }
  if (defined) *defined = n_gt > 0;
  if (n_gt == 0) return std::nan("");
  if (preds.empty()) return 0;

  std::sort(preds.begin(), preds.end(), pred_order);

  std::vector<real> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (const auto& p : preds) {
    const auto& idx = gt_index[p.image_index];
    auto& matched = gt_matched[p.image_index];
    real best = 0.5;  // IoU threshold
    int best_g = -1;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (matched[k]) continue;
      const real v =
          iou(p.box, set[p.image_index].ground_truth[idx[k]].box);
      if (v >= best) {
        best = v;
        best_g = static_cast<int>(k);
      }
    }
    if (best_g >= 0) {
      matched[static_cast<std::size_t>(best_g)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<real>(tp) / static_cast<real>(tp + fp));
    recall.push_back(static_cast<real>(tp) / static_cast<real>(n_gt));
  }

  // Area under the exact precision-recall staircase with the usual
  // monotone-envelope interpolation.
  real ap = 0;
  real prev_recall = 0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    real max_p = 0;
    for (std::size_t j = i; j < precision.size(); ++j)
      max_p = std::max(max_p, precision[j]);
    ap += (recall[i] - prev_recall) * max_p;
    prev_recall = recall[i];
  }
  return ap;
}

EvalResult mean_ap(const DetectionSet& set, int class_count) {
  EvalResult r;
  real sum = 0;
  int n_defined = 0;
  for (int c = 0; c < class_count; ++c) {
    bool defined = false;
    const real ap = average_precision(set, c, &defined);
    r.per_class_ap.push_back(ap);
    r.ap_defined.push_back(defined);
    if (defined) {
      sum += ap;
      ++n_defined;
    } else {
      std::fprintf(stderr,
                   "warning: class %d has no ground truth, AP undefined\n", c);
    }
  }
  if (n_defined == 0) throw InputError("mean_ap: no class has ground truth");
  r.map = sum / n_defined;
  return r;
}

std::vector<HardnessRecord> hardness_rank(
    const std::vector<PairedFeatures>& pairs) {
  std::vector<HardnessRecord> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!same_shape(p.source, p.target))
      throw InputError("hardness_rank: feature shape mismatch");
    real ah = 0;
    for (std::size_t i = 0; i < p.source.size(); ++i)
      ah += std::abs(p.source.data[i] - p.target.data[i]);
    out.push_back({p.sample_id, ah, 0});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const HardnessRecord& a, const HardnessRecord& b) {
                     if (a.ah != b.ah) return a.ah < b.ah;
                     return a.sample_id < b.sample_id;
                   });
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].rank = static_cast<int>(i) + 1;
  return out;
}

}  // namespace stormadapt
