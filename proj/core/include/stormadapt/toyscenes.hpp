#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stormadapt/weathergen.hpp"

namespace stormadapt {

struct AnnotatedImage {
  cv::Mat image;              // CV_32FC3 in [0,1]
  std::vector<Box> boxes;     // pixel coords, x_min < x_max
  std::vector<int> labels;    // class ids in [0, class_count)
  cv::Mat depth;              // CV_32FC1 meters; empty unless clear weather

  void validate(int class_count) const;
};

// Pixel-aligned clear/weather/weather triple sharing one annotation set.
struct AlignedTriplet {
  AnnotatedImage source;     // clear
  AnnotatedImage target;     // requested weather, highest intensity
  AnnotatedImage auxiliary;  // the other weather, highest intensity

  void check_aligned() const;
};

enum class Weather { kFog, kRain };
const char* weather_name(Weather w);
Weather weather_from_name(const std::string& name);
Weather other_weather(Weather w);

struct SceneSpec {
  int image_size = 64;
  int class_count = 3;  // disc, box, triangle
  int min_objects = 1, max_objects = 4;
  double min_obj_size = 12, max_obj_size = 26;  // pixels
  double depth_near = 5, depth_far = 60;        // meters

  void validate() const;
  std::vector<std::string> class_names() const;
};

AnnotatedImage gen_scene(Rng& rng, const SceneSpec& spec);

// Renders one weather variant of a clear scene (8-bit quantized).
cv::Mat render_weather(const AnnotatedImage& clear, Weather weather,
                       Level level, std::uint64_t seed);

// target = requested weather at Large intensity, auxiliary = the other
// weather at Large; annotations are shared across all three members.
AlignedTriplet build_triplet(const AnnotatedImage& clear,
                             Weather target_weather, std::uint64_t seed);

// Dynamic Masking Process over an aligned triplet: one Uniform(0,1) rate and
// one Bernoulli(rate) patch pattern zero the same patches in all members.
void apply_dmp(AlignedTriplet& triplet, const MaskSpec& spec, Rng& rng);

struct SampleRecord {
  std::string id;
  std::string clear_path;
  std::string depth_path;
  // weather renders keyed "fog_small" ... "rain_large"
  std::map<std::string, std::string> weather_paths;
  std::vector<Box> boxes;
  std::vector<int> labels;
};

struct DatasetManifest {
  std::string split;
  Weather target_weather = Weather::kFog;
  SceneSpec scene;
  std::uint64_t seed = 0;
  std::string spec_hash;
  std::vector<SampleRecord> records;
};

struct GeneratedSample {
  std::string id;
  AnnotatedImage clear;
  std::map<std::string, cv::Mat> weather;  // key as in SampleRecord
};

// Writes PNGs + annotations.jsonl + <split>_manifest.json under dir and
// returns the manifest. read_dataset inverts it; images/boxes/labels
// round-trip exactly (lossless formats, 8-bit-aligned pixels).
DatasetManifest write_dataset(const std::vector<GeneratedSample>& samples,
                              const std::string& dir, const std::string& split,
                              Weather target_weather, const SceneSpec& scene,
                              std::uint64_t seed);
DatasetManifest load_manifest(const std::string& manifest_path);
std::vector<GeneratedSample> read_dataset(const DatasetManifest& manifest,
                                          const std::string& dir);

std::string manifest_path_for(const std::string& dir,
                              const std::string& split);

// Full procedural dataset: train split carries target+auxiliary at Large,
// val split carries the target weather at all three levels plus auxiliary.
struct SynthDatasetOptions {
  int n_train = 500;
  int n_val = 100;
  Weather target = Weather::kFog;
  std::uint64_t seed = 0;
  SceneSpec scene;
  std::string out_dir = "dataset";
  // Intensity used for the train-split renders of each weather; the val
  // split always carries the target weather at all three levels.
  Level fog_level = Level::kLarge;
  Level rain_level = Level::kLarge;
};
void synth_dataset(const SynthDatasetOptions& options);

}  // namespace stormadapt
