#include "stormadapt/evalrun.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace stormadapt {

DetectionSet collect_detections(Detector& det, const TripletDataset& ds,
                                const std::string& key) {
  DetectionSet set;
  set.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ImageDetections rec;
    rec.image_id = ds.sample_id(i);
    const cv::Mat& img = key.empty() ? ds.clear(i) : ds.weather(i, key);
    rec.predictions = detect(det, img);
    const auto& boxes = ds.boxes(i);
    const auto& labels = ds.labels(i);
    for (std::size_t j = 0; j < boxes.size(); ++j)
      rec.ground_truth.push_back({boxes[j], labels[j]});
    set.push_back(std::move(rec));
  }
  return set;
}

EvalRow evaluate_condition(Detector& det, const TripletDataset& ds,
                           const std::string& key) {
  const DetectionSet set = collect_detections(det, ds, key);
  const EvalResult res = mean_ap(set, det.cfg.class_count);
  EvalRow row;
  row.condition = key.empty() ? "clear" : key;
  row.map = res.map;
  row.per_class_ap = res.per_class_ap;
  return row;
}

std::vector<EvalRow> intensity_sweep(Detector& det, const TripletDataset& ds) {
  const std::string tgt = weather_name(ds.target_weather());
  std::vector<EvalRow> rows;
  rows.push_back(evaluate_condition(det, ds, ""));
  for (Level lv : {Level::kSmall, Level::kMedium, Level::kLarge})
    rows.push_back(evaluate_condition(det, ds, tgt + "_" + level_name(lv)));
  return rows;
}

void write_eval_csv(const std::vector<EvalRow>& rows,
                    const std::vector<std::string>& class_names,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write eval results: " + path);
  out << "condition,map";
  for (const auto& name : class_names) out << ",ap_" << name;
  out << "\n";
  char buf[64];
  for (const auto& row : rows) {
    out << row.condition;
    std::snprintf(buf, sizeof(buf), ",%.17g", row.map);
    out << buf;
    for (real ap : row.per_class_ap) {
      std::snprintf(buf, sizeof(buf), ",%.17g", ap);
      out << buf;
    }
    out << "\n";
  }
}

DiagnoseResult diagnose(Detector& det, const TripletDataset& ds,
                        const std::string& out_dir) {
  if (ds.size() == 0) throw InputError("diagnose needs a non-empty split");
  fs::create_directories(out_dir);

  std::vector<TripletDistances> dists(ds.size());
  std::vector<PairedFeatures> pairs(ds.size());
  std::vector<Tensor> feats_s(ds.size()), feats_t(ds.size()), feats_a(ds.size());

  for (std::size_t i = 0; i < ds.size(); ++i) {
    Backbone::Trace bs, bt, ba;
    feats_s[i] = det.backbone.forward(image_to_tensor(ds.clear(i)), bs);
    feats_t[i] = det.backbone.forward(image_to_tensor(ds.target(i)), bt);
    feats_a[i] = det.backbone.forward(image_to_tensor(ds.aux(i)), ba);
    dists[i].d_st = feature_distance(feats_s[i], feats_t[i]);
    dists[i].d_sa = feature_distance(feats_s[i], feats_a[i]);
    pairs[i].sample_id = ds.sample_id(i);
    pairs[i].source = feats_s[i];
    pairs[i].target = feats_t[i];
  }

  DiagnoseResult res;
  res.ordering = ordering_rate(dists);

  char buf[256];
  res.distances_csv = (fs::path(out_dir) / "distances.csv").string();
  {
    std::ofstream out(res.distances_csv);
    if (!out) throw InputError("cannot write " + res.distances_csv);
    out << "sample_id,d_st,d_sa\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g\n",
                    ds.sample_id(i).c_str(), dists[i].d_st, dists[i].d_sa);
      out << buf;
    }
  }

  res.hardness_csv = (fs::path(out_dir) / "hardness.csv").string();
  {
    const auto ranking = hardness_rank(pairs);
    std::ofstream out(res.hardness_csv);
    if (!out) throw InputError("cannot write " + res.hardness_csv);
    out << "sample_id,ah,rank\n";
    for (const auto& r : ranking) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%d\n", r.sample_id.c_str(),
                    r.ah, r.rank);
      out << buf;
    }
  }

  // Fixed-seed Gaussian random projection to 2-d for quick feature-space
  // scatter plots: one row per (sample, domain).
  res.projection_csv = (fs::path(out_dir) / "projection.csv").string();
  {
    const std::size_t n = feats_s[0].size();
    Rng prng(derive_seed(0x9d0ab5u, 0));
    std::normal_distribution<real> gauss(0.0, 1.0);
    std::vector<real> proj(2 * n);
    for (auto& v : proj) v = gauss(prng) / std::sqrt(static_cast<real>(n));

    std::ofstream out(res.projection_csv);
    if (!out) throw InputError("cannot write " + res.projection_csv);
    out << "sample_id,domain,x,y\n";
    auto emit = [&](const std::string& id, const char* domain,
                    const Tensor& f) {
      real x = 0, y = 0;
      for (std::size_t k = 0; k < n; ++k) {
        x += proj[k] * f.data[k];
        y += proj[n + k] * f.data[k];
      }
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g\n", id.c_str(),
                    domain, x, y);
      out << buf;
    };
    for (std::size_t i = 0; i < ds.size(); ++i) {
      emit(ds.sample_id(i), "source", feats_s[i]);
      emit(ds.sample_id(i), "target", feats_t[i]);
      emit(ds.sample_id(i), "auxiliary", feats_a[i]);
    }
  }
  return res;
}

}  // namespace stormadapt
