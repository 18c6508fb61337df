#pragma once

#include <opencv2/core.hpp>
#include <vector>

#include "stormadapt/common.hpp"

namespace stormadapt {

enum class Level { kSmall, kMedium, kLarge };

const char* level_name(Level level);
Level level_from_name(const std::string& name);

// Atmospheric scattering fog: out = image * t + airlight * (1 - t) with
// transmittance t = exp(-beta_atm * depth).
struct FogParams {
  double beta_atm = 0.05;                      // 1/meter
  cv::Vec3f airlight{0.92f, 0.92f, 0.95f};     // RGB in [0,1]
  Level level = Level::kMedium;

  // Per-level attenuation tuned for the 5-60 m toy depth range.
  static FogParams for_level(Level level);
  void validate() const;
};

// Procedural rain streak map plus RainMix-style random affine remixing.
struct RainSpec {
  int width = 128, height = 128;
  int streak_count = 60;
  double length_min = 6, length_max = 18;      // pixels
  int thickness_min = 1, thickness_max = 2;    // pixels
  double angle_jitter_deg = 20;                // streak tilt off vertical
  double rotate_range_deg = 15;                // transform sampling ranges
  double zoom_min = 0.8, zoom_max = 1.2;
  double translate_range_px = 10;
  double shear_range = 0.15;
  double blend_gain = 0.8;                     // screen-blend gain k
  std::uint64_t rng_seed = 0;

  // Erosion radius per intensity: more erosion -> thinner streaks -> lighter.
  static int erosion_radius(Level level);
  void validate() const;
};

// Dynamic masking: Bernoulli(rate) dropping of fixed-area square patches,
// one rate and one pattern shared across all images of an aligned triplet.
struct MaskSpec {
  int patch_pixels = 64;
  std::uint64_t rng_seed = 0;

  int patch_side() const;  // sqrt(patch_pixels), validated
  void validate() const;
};

cv::Mat synth_fog(const cv::Mat& image, const cv::Mat& depth,
                  const FogParams& params);

cv::Mat gen_rain_map(const RainSpec& spec, Rng& rng);

cv::Mat rainmix_transform(const cv::Mat& map, Rng& rng, const RainSpec& spec);

cv::Mat apply_rain(const cv::Mat& image, const cv::Mat& map, Level level,
                   const RainSpec& spec);

// One Bernoulli(rate) patch pattern; true = patch is dropped.
// rate is drawn from Uniform(0,1) by the caller or via sample_mask_rate.
cv::Mat sample_patch_mask(int height, int width, const MaskSpec& spec,
                          double rate, Rng& rng);
double sample_mask_rate(Rng& rng);

// Zeroes masked patches in-place in every image; all images must share the
// mask's dimensions. This is the per-image half of the Dynamic Masking
// Process; the triplet-level entry point lives with AlignedTriplet.
void apply_patch_mask(const std::vector<cv::Mat*>& images,
                      const cv::Mat& mask);

}  // namespace stormadapt
