#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "stormadapt/evalkit.hpp"

using namespace stormadapt;

namespace {

// Independent AP oracle: same deterministic matching contract, but the
// PR integration searches the precision envelope by brute force at every
// recall level instead of a single monotone sweep.
real ap_oracle(const DetectionSet& set, int label, bool* defined) {
  struct Pred {
    std::size_t img;
    Detection det;
  };
  std::vector<Pred> preds;
  int n_gt = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (const auto& d : set[i].predictions)
      if (d.label == label) preds.push_back({i, d});
    for (const auto& g : set[i].ground_truth) n_gt += g.label == label;
  }
  if (defined) *defined = n_gt > 0;
  if (n_gt == 0) return std::nan("");
  if (preds.empty()) return 0;

  std::sort(preds.begin(), preds.end(), [&](const Pred& a, const Pred& b) {
    if (a.det.confidence != b.det.confidence)
      return a.det.confidence > b.det.confidence;
    if (set[a.img].image_id != set[b.img].image_id)
      return set[a.img].image_id < set[b.img].image_id;
    const auto ka = std::tie(a.det.box.x_min, a.det.box.y_min,
                             a.det.box.x_max, a.det.box.y_max);
    const auto kb = std::tie(b.det.box.x_min, b.det.box.y_min,
                             b.det.box.x_max, b.det.box.y_max);
    return ka < kb;
  });

  std::vector<std::vector<bool>> used(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    used[i].assign(set[i].ground_truth.size(), false);

  std::vector<real> precision, recall;
  int tp = 0, fp = 0;
  for (const Pred& p : preds) {
    real best = 0.5;
    int best_j = -1;
    const auto& gts = set[p.img].ground_truth;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].label != label || used[p.img][j]) continue;
      const real v = iou(p.det.box, gts[j].box);
      if (v >= best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      used[p.img][static_cast<std::size_t>(best_j)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<real>(tp) / (tp + fp));
    recall.push_back(static_cast<real>(tp) / n_gt);
  }

  // integrate sum over recall steps of (r_k - r_{k-1}) * max precision at
  // recall >= r_k, with the max found by exhaustive search
  real ap = 0, prev_r = 0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    if (recall[k] == prev_r) continue;
    real pmax = 0;
    for (std::size_t j = 0; j < recall.size(); ++j)
      if (recall[j] >= recall[k]) pmax = std::max(pmax, precision[j]);
    ap += (recall[k] - prev_r) * pmax;
    prev_r = recall[k];
  }
  return ap;
}

Detection det(real x, real y, real s, int label, real conf) {
  return {{x, y, x + s, y + s}, label, conf};
}

}  // namespace

TEST_CASE("iou closed forms") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  // unit squares overlapping half: 0.5 / 1.5 = 1/3
  CHECK(iou({0, 0, 1, 1}, {0.5, 0, 1.5, 1}) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou(a, {5, 5, 5, 5}) == 0.0);  // degenerate
}

TEST_CASE("average precision: edge cases") {
  DetectionSet set(1);
  set[0].image_id = "a";
  set[0].ground_truth = {{{0, 0, 10, 10}, 0}, {{20, 20, 30, 30}, 0}};
  set[0].predictions = {det(0, 0, 10, 0, 0.9), det(20, 20, 10, 0, 0.8)};
  bool defined = false;
  CHECK(average_precision(set, 0, &defined) == doctest::Approx(1.0));
  CHECK(defined);

  set[0].predictions.clear();
  CHECK(average_precision(set, 0, &defined) == 0.0);

  CHECK(!std::isnan(average_precision(set, 0, &defined)));
  average_precision(set, 1, &defined);  // no class-1 ground truth
  CHECK(!defined);
}

TEST_CASE("average precision: hand case vs oracle") {
  // 3 GT, 4 predictions: TP, FP, TP, TP -> precisions 1, 1/2, 2/3, 3/4
  DetectionSet set(1);
  set[0].image_id = "img";
  set[0].ground_truth = {{{0, 0, 10, 10}, 0},
                         {{20, 0, 30, 10}, 0},
                         {{40, 0, 50, 10}, 0}};
  set[0].predictions = {det(0, 0, 10, 0, 0.9), det(60, 0, 10, 0, 0.8),
                        det(20, 0, 10, 0, 0.7), det(40, 0, 10, 0, 0.6)};
  bool defined = false;
  const real got = average_precision(set, 0, &defined);
  const real want = ap_oracle(set, 0, nullptr);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  // hand integration with the precision envelope: the 3/4 precision reached
  // at recall 1 lifts the 2/3 segment, so AP = (1 + 3/4 + 3/4) / 3
  CHECK(got == doctest::Approx((1.0 + 3.0 / 4.0 + 3.0 / 4.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("average precision: 50 randomized sets match the oracle to 1e-9") {
  Rng rng(51);
  std::uniform_real_distribution<real> u(0, 50);
  std::uniform_int_distribution<int> ucount(0, 10);
  std::uniform_int_distribution<int> uimg(1, 3);
  std::uniform_int_distribution<int> ulab(0, 1);
  // coarse confidence grid so ties actually occur
  std::uniform_int_distribution<int> uconf(1, 5);

  for (int c = 0; c < 50; ++c) {
    DetectionSet set(static_cast<std::size_t>(uimg(rng)));
    for (std::size_t i = 0; i < set.size(); ++i) {
      set[i].image_id = "img" + std::to_string(i);
      const int n_gt = ucount(rng) / 2;
      for (int j = 0; j < n_gt; ++j) {
        const real x = u(rng), y = u(rng);
        set[i].ground_truth.push_back({{x, y, x + 8, y + 8}, ulab(rng)});
      }
      const int n_pred = ucount(rng);
      for (int j = 0; j < n_pred; ++j) {
        // mix of near-GT and random boxes
        Box b;
        if (!set[i].ground_truth.empty() && j % 2 == 0) {
          const Box& g = set[i].ground_truth[static_cast<std::size_t>(j) %
                                             set[i].ground_truth.size()]
                             .box;
          b = {g.x_min + 1, g.y_min + 1, g.x_max + 1, g.y_max + 1};
        } else {
          const real x = u(rng), y = u(rng);
          b = {x, y, x + 8, y + 8};
        }
        set[i].predictions.push_back(
            {b, ulab(rng), uconf(rng) / 5.0});
      }
    }
    for (int label = 0; label < 2; ++label) {
      bool d1 = false, d2 = false;
      const real got = average_precision(set, label, &d1);
      const real want = ap_oracle(set, label, &d2);
      CHECK(d1 == d2);
      if (d1) CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("adding a correct detection never hurts; duplicates never help") {
  Rng rng(53);
  DetectionSet set(1);
  set[0].image_id = "x";
  set[0].ground_truth = {{{0, 0, 10, 10}, 0}, {{20, 20, 30, 30}, 0}};
  set[0].predictions = {det(0, 0, 10, 0, 0.9), det(50, 50, 5, 0, 0.7)};
  const real base = average_precision(set, 0, nullptr);

  DetectionSet plus = set;
  plus[0].predictions.push_back(det(20, 20, 10, 0, 0.8));
  CHECK(average_precision(plus, 0, nullptr) >= base);

  DetectionSet dup = set;
  dup[0].predictions.push_back(det(0, 0, 10, 0, 0.85));  // duplicate match
  CHECK(average_precision(dup, 0, nullptr) <= base);
}

TEST_CASE("mean ap over classes") {
  DetectionSet set(1);
  set[0].image_id = "m";
  set[0].ground_truth = {{{0, 0, 10, 10}, 0}, {{20, 20, 30, 30}, 1}};
  set[0].predictions = {det(0, 0, 10, 0, 0.9), det(20, 20, 10, 1, 0.8)};
  const EvalResult two = mean_ap(set, 2);
  CHECK(two.map == doctest::Approx(1.0));
  CHECK(two.per_class_ap.size() == 2);

  // class 2 has no ground truth: excluded from the mean
  const EvalResult three = mean_ap(set, 3);
  CHECK(three.map == doctest::Approx(1.0));
  CHECK(!three.ap_defined[2]);
  CHECK(std::isnan(three.per_class_ap[2]));

  DetectionSet empty(1);
  empty[0].image_id = "e";
  CHECK_THROWS_AS(mean_ap(empty, 2), InputError);
}

TEST_CASE("hardness ranking") {
  auto tens = [](std::vector<real> v) {
    Tensor t({static_cast<int>(v.size())});
    t.data = std::move(v);
    return t;
  };
  std::vector<PairedFeatures> pairs;
  pairs.push_back({"easy", tens({0, 0}), tens({3, 3})});    // ah = 6
  pairs.push_back({"hard", tens({1, 1}), tens({1, 1})});    // ah = 0
  pairs.push_back({"mid", tens({0, 0}), tens({1, -1})});    // ah = 2
  auto ranked = hardness_rank(pairs);
  REQUIRE(ranked.size() == 3);
  CHECK(ranked[0].sample_id == "hard");
  CHECK(ranked[0].ah == 0.0);
  CHECK(ranked[0].rank == 1);
  CHECK(ranked[1].sample_id == "mid");
  CHECK(ranked[2].sample_id == "easy");
  CHECK(ranked[2].rank == 3);

  // scaling features preserves the ranking, scales ah
  for (auto& p : pairs) {
    for (auto& v : p.source.data) v *= 2.5;
    for (auto& v : p.target.data) v *= 2.5;
  }
  auto scaled = hardness_rank(pairs);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(scaled[i].sample_id == ranked[i].sample_id);
    CHECK(scaled[i].ah == doctest::Approx(2.5 * ranked[i].ah));
  }

  // constructed fog monotone case: distances 0.5 < 1.0 < 2.0 from heavy to
  // light fog, so the heavier render ranks earlier (harder)
  std::vector<PairedFeatures> fog;
  fog.push_back({"large", tens({0}), tens({0.5})});
  fog.push_back({"medium", tens({0}), tens({1.0})});
  fog.push_back({"small", tens({0}), tens({2.0})});
  auto fr = hardness_rank(fog);
  CHECK(fr[0].sample_id == "large");
  CHECK(fr[1].sample_id == "medium");
  CHECK(fr[2].sample_id == "small");
}
