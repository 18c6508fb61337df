#include "stormadapt/toyscenes.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "stormadapt/image_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace stormadapt {

void AnnotatedImage::validate(int class_count) const {
  if (boxes.size() != labels.size())
    throw InputError("annotated image: |boxes| != |labels|");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    if (!b.valid()) throw InputError("annotated image: degenerate box");
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > image.cols ||
        b.y_max > image.rows)
      throw InputError("annotated image: box out of bounds");
    if (labels[i] < 0 || labels[i] >= class_count)
      throw InputError("annotated image: label out of range");
  }
}

void AlignedTriplet::check_aligned() const {
  if (source.image.size() != target.image.size() ||
      source.image.size() != auxiliary.image.size())
    throw InternalError("triplet members differ in size");
  if (source.boxes.size() != target.boxes.size() ||
      source.boxes.size() != auxiliary.boxes.size())
    throw InternalError("triplet annotations differ");
}

const char* weather_name(Weather w) {
  return w == Weather::kFog ? "fog" : "rain";
}

Weather weather_from_name(const std::string& name) {
  if (name == "fog") return Weather::kFog;
  if (name == "rain") return Weather::kRain;
  throw InputError("unknown weather: " + name);
}

Weather other_weather(Weather w) {
  return w == Weather::kFog ? Weather::kRain : Weather::kFog;
}

void SceneSpec::validate() const {
  if (image_size < 32) throw InputError("scene: image_size too small");
  if (class_count < 1 || class_count > 3)
    throw InputError("scene: class_count must be in [1,3]");
  if (min_objects < 0 || max_objects < min_objects)
    throw InputError("scene: bad object count range");
  if (min_obj_size < 4 || max_obj_size < min_obj_size ||
      max_obj_size > image_size / 2.0)
    throw InputError("scene: bad object size range");
  if (depth_near <= 0 || depth_far <= depth_near)
    throw InputError("scene: bad depth range");
  if (depth_far > 65.0)
    throw InputError("scene: depth_far exceeds 16-bit millimeter range");
}

std::vector<std::string> SceneSpec::class_names() const {
  static const std::vector<std::string> all = {"disc", "box", "triangle"};
  return {all.begin(), all.begin() + class_count};
}

namespace {

const cv::Vec3f kClassColors[3] = {
    {0.85f, 0.25f, 0.20f},  // disc
    {0.20f, 0.70f, 0.30f},  // box
    {0.25f, 0.35f, 0.85f},  // triangle
};

double row_depth(const SceneSpec& spec, int y, int rows) {
  const double t = rows > 1 ? static_cast<double>(y) / (rows - 1) : 1.0;
  return spec.depth_far + (spec.depth_near - spec.depth_far) * t;
}

// Millimeter grid so the 16-bit depth PNG round-trips exactly.
float quantize_mm(double meters) {
  return static_cast<float>(std::round(meters * 1000.0) / 1000.0);
}

bool boxes_disjoint(const Box& a, const Box& b) {
  return a.x_max <= b.x_min || b.x_max <= a.x_min || a.y_max <= b.y_min ||
         b.y_max <= a.y_min;
}

}  // namespace

AnnotatedImage gen_scene(Rng& rng, const SceneSpec& spec) {
  spec.validate();
  const int sz = spec.image_size;

  AnnotatedImage out;
  out.image.create(sz, sz, CV_32FC3);
  out.depth.create(sz, sz, CV_32FC1);

  // Sky-to-ground gradient with light texture noise.
  std::uniform_real_distribution<float> noise(-0.03f, 0.03f);
  const cv::Vec3f sky(0.65f, 0.70f, 0.78f), ground(0.46f, 0.44f, 0.40f);
  for (int y = 0; y < sz; ++y) {
    const float t = static_cast<float>(y) / (sz - 1);
    const float d = quantize_mm(row_depth(spec, y, sz));
    for (int x = 0; x < sz; ++x) {
      const float n = noise(rng);
      cv::Vec3f c = sky * (1 - t) + ground * t;
      for (int k = 0; k < 3; ++k)
        c[k] = std::clamp(c[k] + n, 0.0f, 1.0f);
      out.image.at<cv::Vec3f>(y, x) = c;
      out.depth.at<float>(y, x) = d;
    }
  }

  std::uniform_int_distribution<int> ucount(spec.min_objects,
                                            spec.max_objects);
  std::uniform_int_distribution<int> uclass(0, spec.class_count - 1);
  std::uniform_real_distribution<double> usize(spec.min_obj_size,
                                               spec.max_obj_size);
  std::uniform_real_distribution<float> ujit(-0.08f, 0.08f);
  std::uniform_real_distribution<double> uaspect(0.7, 1.3);

  const int n_objects = ucount(rng);
  for (int i = 0; i < n_objects; ++i) {
    const int cls = uclass(rng);
    const double size = usize(rng);
    const double aspect = uaspect(rng);
    cv::Vec3f color = kClassColors[cls];
    for (int k = 0; k < 3; ++k)
      color[k] = std::clamp(color[k] + ujit(rng), 0.05f, 0.98f);

    // Rejection-sample a placement whose box is disjoint from the others;
    // overlap would break tight-box recovery from rendered masks.
    cv::Mat mask;
    Box box;
    bool placed = false;
    const int margin = static_cast<int>(size / 2) + 2;
    std::uniform_int_distribution<int> upos(margin, sz - 1 - margin);
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      const int cx = upos(rng), cy = upos(rng);
      mask = cv::Mat::zeros(sz, sz, CV_8UC1);
      if (cls == 0) {
        cv::circle(mask, {cx, cy}, static_cast<int>(size / 2),
                   cv::Scalar(255), cv::FILLED, cv::LINE_8);
      } else if (cls == 1) {
        const int hw = static_cast<int>(size / 2);
        const int hh = std::max(3, static_cast<int>(size * aspect / 2));
        cv::rectangle(mask, {cx - hw, cy - hh}, {cx + hw, cy + hh},
                      cv::Scalar(255), cv::FILLED, cv::LINE_8);
      } else {
        const int hw = static_cast<int>(size / 2);
        const int hh = static_cast<int>(size / 2);
        const cv::Point pts[3] = {
            {cx, cy - hh}, {cx - hw, cy + hh}, {cx + hw, cy + hh}};
        cv::fillConvexPoly(mask, pts, 3, cv::Scalar(255), cv::LINE_8);
      }
      const cv::Rect r = cv::boundingRect(mask);
      if (r.width <= 0 || r.height <= 0) continue;
      box = {static_cast<real>(r.x), static_cast<real>(r.y),
             static_cast<real>(r.x + r.width),
             static_cast<real>(r.y + r.height)};
      placed = true;
      for (const Box& other : out.boxes)
        if (!boxes_disjoint(box, other)) { placed = false; break; }
    }
    if (!placed) continue;

    const int base_y =
        std::min(sz - 1, static_cast<int>(box.y_max));
    const float obj_depth = quantize_mm(row_depth(spec, base_y, sz));
    out.image.setTo(cv::Scalar(color[0], color[1], color[2]), mask);
    out.depth.setTo(cv::Scalar(obj_depth), mask);
    out.boxes.push_back(box);
    out.labels.push_back(cls);
  }

  out.image = quantize8(out.image);
  out.validate(spec.class_count);
  return out;
}

cv::Mat render_weather(const AnnotatedImage& clear, Weather weather,
                       Level level, std::uint64_t seed) {
  if (clear.depth.empty())
    throw InputError("render_weather: clear image carries no depth map");
  cv::Mat rendered;
  if (weather == Weather::kFog) {
    rendered = synth_fog(clear.image, clear.depth, FogParams::for_level(level));
  } else {
    RainSpec spec;
    spec.width = clear.image.cols;
    spec.height = clear.image.rows;
    spec.rng_seed = seed;
    Rng rng(seed);
    cv::Mat map = gen_rain_map(spec, rng);
    map = rainmix_transform(map, rng, spec);
    rendered = apply_rain(clear.image, map, level, spec);
  }
  return quantize8(rendered);
}

AlignedTriplet build_triplet(const AnnotatedImage& clear,
                             Weather target_weather, std::uint64_t seed) {
  if (clear.depth.empty())
    throw InputError("build_triplet: clear image carries no depth map");
  AlignedTriplet t;
  t.source = clear;
  const Weather aux_weather = other_weather(target_weather);
  t.target.image =
      render_weather(clear, target_weather, Level::kLarge, seed);
  t.auxiliary.image =
      render_weather(clear, aux_weather, Level::kLarge, seed);
  t.target.boxes = t.auxiliary.boxes = clear.boxes;
  t.target.labels = t.auxiliary.labels = clear.labels;
  t.check_aligned();
  return t;
}

void apply_dmp(AlignedTriplet& triplet, const MaskSpec& spec, Rng& rng) {
  triplet.check_aligned();
  const double rate = sample_mask_rate(rng);
  const cv::Mat mask = sample_patch_mask(triplet.source.image.rows,
                                         triplet.source.image.cols, spec,
                                         rate, rng);
  apply_patch_mask(
      {&triplet.source.image, &triplet.target.image, &triplet.auxiliary.image},
      mask);
}

namespace {

json box_to_json(const Box& b) {
  return json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

Box box_from_json(const json& j) {
  return Box{j.at(0).get<real>(), j.at(1).get<real>(), j.at(2).get<real>(),
             j.at(3).get<real>()};
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

json scene_to_json(const SceneSpec& s) {
  return json{{"image_size", s.image_size},
              {"class_count", s.class_count},
              {"min_objects", s.min_objects},
              {"max_objects", s.max_objects},
              {"min_obj_size", s.min_obj_size},
              {"max_obj_size", s.max_obj_size},
              {"depth_near", s.depth_near},
              {"depth_far", s.depth_far}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.image_size = j.at("image_size").get<int>();
  s.class_count = j.at("class_count").get<int>();
  s.min_objects = j.at("min_objects").get<int>();
  s.max_objects = j.at("max_objects").get<int>();
  s.min_obj_size = j.at("min_obj_size").get<double>();
  s.max_obj_size = j.at("max_obj_size").get<double>();
  s.depth_near = j.at("depth_near").get<double>();
  s.depth_far = j.at("depth_far").get<double>();
  return s;
}

}  // namespace

std::string manifest_path_for(const std::string& dir,
                              const std::string& split) {
  return (fs::path(dir) / (split + "_manifest.json")).string();
}

DatasetManifest write_dataset(const std::vector<GeneratedSample>& samples,
                              const std::string& dir, const std::string& split,
                              Weather target_weather, const SceneSpec& scene,
                              std::uint64_t seed) {
  const fs::path split_dir = fs::path(dir) / split;
  fs::create_directories(split_dir);

  DatasetManifest manifest;
  manifest.split = split;
  manifest.target_weather = target_weather;
  manifest.scene = scene;
  manifest.seed = seed;
  manifest.spec_hash = fnv1a_hex(scene_to_json(scene).dump());

  std::ofstream ann((split_dir / "annotations.jsonl").string());
  if (!ann) throw InputError("cannot open annotations file for writing");

  for (const auto& s : samples) {
    SampleRecord rec;
    rec.id = s.id;
    rec.clear_path = split + "/clear_" + s.id + ".png";
    rec.depth_path = split + "/depth_" + s.id + ".png";
    save_image_png((fs::path(dir) / rec.clear_path).string(), s.clear.image);
    save_depth_png((fs::path(dir) / rec.depth_path).string(), s.clear.depth);
    for (const auto& [key, img] : s.weather) {
      const std::string rel = split + "/" + key + "_" + s.id + ".png";
      save_image_png((fs::path(dir) / rel).string(), img);
      rec.weather_paths[key] = rel;
    }
    rec.boxes = s.clear.boxes;
    rec.labels = s.clear.labels;

    json line{{"id", rec.id}, {"labels", rec.labels}};
    json jboxes = json::array();
    for (const Box& b : rec.boxes) jboxes.push_back(box_to_json(b));
    line["boxes"] = jboxes;
    ann << line.dump() << "\n";

    manifest.records.push_back(std::move(rec));
  }
  ann.close();

  json j{{"split", manifest.split},
         {"target_weather", weather_name(manifest.target_weather)},
         {"scene", scene_to_json(scene)},
         {"seed", manifest.seed},
         {"spec_hash", manifest.spec_hash},
         {"class_names", scene.class_names()},
         {"annotations", split + "/annotations.jsonl"}};
  json jrecords = json::array();
  for (const auto& rec : manifest.records) {
    json jr{{"id", rec.id},
            {"clear", rec.clear_path},
            {"depth", rec.depth_path},
            {"weather", rec.weather_paths}};
    json jboxes = json::array();
    for (const Box& b : rec.boxes) jboxes.push_back(box_to_json(b));
    jr["boxes"] = jboxes;
    jr["labels"] = rec.labels;
    jrecords.push_back(std::move(jr));
  }
  j["records"] = std::move(jrecords);

  std::ofstream mf(manifest_path_for(dir, split));
  if (!mf) throw InputError("cannot open manifest for writing");
  mf << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw InputError("manifest not found: " + manifest_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("corrupt manifest " + manifest_path + ": " + e.what());
  }
  DatasetManifest m;
  m.split = j.at("split").get<std::string>();
  m.target_weather =
      weather_from_name(j.at("target_weather").get<std::string>());
  m.scene = scene_from_json(j.at("scene"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.spec_hash = j.at("spec_hash").get<std::string>();
  for (const auto& jr : j.at("records")) {
    SampleRecord rec;
    rec.id = jr.at("id").get<std::string>();
    rec.clear_path = jr.at("clear").get<std::string>();
    rec.depth_path = jr.at("depth").get<std::string>();
    for (const auto& [key, val] : jr.at("weather").items())
      rec.weather_paths[key] = val.get<std::string>();
    for (const auto& jb : jr.at("boxes")) rec.boxes.push_back(box_from_json(jb));
    rec.labels = jr.at("labels").get<std::vector<int>>();
    m.records.push_back(std::move(rec));
  }
  return m;
}

std::vector<GeneratedSample> read_dataset(const DatasetManifest& manifest,
                                          const std::string& dir) {
  std::vector<GeneratedSample> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    const auto check = [&](const std::string& rel) {
      const std::string full = (fs::path(dir) / rel).string();
      if (!fs::exists(full))
        throw InputError("dataset file missing: " + full);
      return full;
    };
    GeneratedSample s;
    s.id = rec.id;
    s.clear.image = load_image_png(check(rec.clear_path));
    s.clear.depth = load_depth_png(check(rec.depth_path));
    s.clear.boxes = rec.boxes;
    s.clear.labels = rec.labels;
    for (const auto& [key, rel] : rec.weather_paths)
      s.weather[key] = load_image_png(check(rel));
    out.push_back(std::move(s));
  }
  return out;
}

void synth_dataset(const SynthDatasetOptions& options) {
  options.scene.validate();
  const Weather tgt = options.target;
  const Weather aux = other_weather(tgt);
  const std::string tgt_name = weather_name(tgt);
  const std::string aux_name = weather_name(aux);
  const auto level_of = [&](Weather w) {
    return w == Weather::kFog ? options.fog_level : options.rain_level;
  };

  const auto make_sample = [&](std::uint64_t stream, bool all_levels) {
    GeneratedSample s;
    Rng rng(derive_seed(options.seed, stream));
    s.clear = gen_scene(rng, options.scene);
    const std::uint64_t wseed = derive_seed(options.seed, stream + 0x10000000);
    if (all_levels) {
      for (Level lv : {Level::kSmall, Level::kMedium, Level::kLarge}) {
        s.weather[tgt_name + "_" + level_name(lv)] =
            render_weather(s.clear, tgt, lv, wseed);
      }
    } else {
      const Level tl = level_of(tgt);
      s.weather[tgt_name + "_" + level_name(tl)] =
          render_weather(s.clear, tgt, tl, wseed);
    }
    const Level al = all_levels ? Level::kLarge : level_of(aux);
    s.weather[aux_name + "_" + level_name(al)] =
        render_weather(s.clear, aux, al, wseed);
    return s;
  };

  std::vector<GeneratedSample> train;
  for (int i = 0; i < options.n_train; ++i) {
    auto s = make_sample(static_cast<std::uint64_t>(i), false);
    char id[16];
    std::snprintf(id, sizeof(id), "%05d", i);
    s.id = id;
    train.push_back(std::move(s));
  }
  write_dataset(train, options.out_dir, "train", tgt, options.scene,
                options.seed);

  // Val streams are offset so the splits are seed-disjoint by construction.
  std::vector<GeneratedSample> val;
  for (int i = 0; i < options.n_val; ++i) {
    auto s = make_sample(0x40000000ULL + static_cast<std::uint64_t>(i), true);
    char id[16];
    std::snprintf(id, sizeof(id), "%05d", i);
    s.id = id;
    val.push_back(std::move(s));
  }
  write_dataset(val, options.out_dir, "val", tgt, options.scene, options.seed);
}

}  // namespace stormadapt
