#include "stormadapt/weathergen.hpp"

#include <cmath>
#include <opencv2/imgproc.hpp>

namespace stormadapt {

const char* level_name(Level level) {
  switch (level) {
    case Level::kSmall: return "small";
    case Level::kMedium: return "medium";
    case Level::kLarge: return "large";
  }
  return "?";
}

Level level_from_name(const std::string& name) {
  if (name == "small") return Level::kSmall;
  if (name == "medium") return Level::kMedium;
  if (name == "large") return Level::kLarge;
  throw InputError("unknown intensity level: " + name);
}

FogParams FogParams::for_level(Level level) {
  FogParams p;
  p.level = level;
  switch (level) {
    case Level::kSmall: p.beta_atm = 0.025; break;
    case Level::kMedium: p.beta_atm = 0.05; break;
    case Level::kLarge: p.beta_atm = 0.1; break;
  }
  return p;
}

void FogParams::validate() const {
  if (beta_atm < 0) throw InputError("fog: beta_atm must be >= 0");
  for (int c = 0; c < 3; ++c)
    if (airlight[c] < 0 || airlight[c] > 1)
      throw InputError("fog: airlight must be in [0,1]^3");
}

int RainSpec::erosion_radius(Level level) {
  switch (level) {
    case Level::kSmall: return 2;
    case Level::kMedium: return 1;
    case Level::kLarge: return 0;
  }
  return 0;
}

void RainSpec::validate() const {
  if (width <= 0 || height <= 0) throw InputError("rain: bad map size");
  if (streak_count < 0) throw InputError("rain: streak_count must be >= 0");
  if (length_min > length_max || thickness_min > thickness_max)
    throw InputError("rain: inverted range");
  if (zoom_min <= 0 || zoom_min > zoom_max)
    throw InputError("rain: bad zoom range");
  if (blend_gain < 0 || blend_gain > 1)
    throw InputError("rain: blend_gain must be in [0,1]");
}

int MaskSpec::patch_side() const {
  const int side = static_cast<int>(std::lround(std::sqrt(
      static_cast<double>(patch_pixels))));
  if (side * side != patch_pixels)
    throw InputError("mask: patch_pixels must be a perfect square");
  return side;
}

void MaskSpec::validate() const { (void)patch_side(); }

cv::Mat synth_fog(const cv::Mat& image, const cv::Mat& depth,
                  const FogParams& params) {
  CV_Assert(image.type() == CV_32FC3);
  CV_Assert(depth.type() == CV_32FC1);
  params.validate();
  if (image.size() != depth.size())
    throw InputError("synth_fog: image/depth shape mismatch");
  double mn = 0, mx = 0;
  cv::minMaxLoc(depth, &mn, &mx);
  if (mn < 0 || !std::isfinite(mx))
    throw InputError("synth_fog: depth must be finite and non-negative");

  cv::Mat out(image.size(), CV_32FC3);
  for (int y = 0; y < image.rows; ++y) {
    const cv::Vec3f* src = image.ptr<cv::Vec3f>(y);
    const float* d = depth.ptr<float>(y);
    cv::Vec3f* dst = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.cols; ++x) {
      const float t =
          static_cast<float>(std::exp(-params.beta_atm * d[x]));
      for (int c = 0; c < 3; ++c) {
        const float v = src[x][c] * t + params.airlight[c] * (1.0f - t);
        dst[x][c] = std::min(1.0f, std::max(0.0f, v));
      }
    }
  }
  return out;
}

cv::Mat gen_rain_map(const RainSpec& spec, Rng& rng) {
  spec.validate();
  cv::Mat map = cv::Mat::zeros(spec.height, spec.width, CV_32FC1);
  std::uniform_real_distribution<double> ux(0, spec.width - 1);
  std::uniform_real_distribution<double> uy(0, spec.height - 1);
  std::uniform_real_distribution<double> ulen(spec.length_min,
                                              spec.length_max);
  std::uniform_real_distribution<double> uang(-spec.angle_jitter_deg,
                                              spec.angle_jitter_deg);
  std::uniform_int_distribution<int> uthick(spec.thickness_min,
                                            spec.thickness_max);
  std::uniform_real_distribution<double> uint_(0.4, 1.0);
  for (int i = 0; i < spec.streak_count; ++i) {
    const double cx = ux(rng), cy = uy(rng);
    const double len = ulen(rng);
    const double ang = (90.0 + uang(rng)) * CV_PI / 180.0;  // near vertical
    const int thick = uthick(rng);
    const double intensity = uint_(rng);
    const cv::Point p0(static_cast<int>(cx - 0.5 * len * std::cos(ang)),
                       static_cast<int>(cy - 0.5 * len * std::sin(ang)));
    const cv::Point p1(static_cast<int>(cx + 0.5 * len * std::cos(ang)),
                       static_cast<int>(cy + 0.5 * len * std::sin(ang)));
    cv::line(map, p0, p1, cv::Scalar(intensity), thick, cv::LINE_8);
  }
  cv::min(map, 1.0f, map);
  return map;
}

cv::Mat rainmix_transform(const cv::Mat& map, Rng& rng,
                          const RainSpec& spec) {
  CV_Assert(map.type() == CV_32FC1);
  std::uniform_real_distribution<double> urot(-spec.rotate_range_deg,
                                              spec.rotate_range_deg);
  std::uniform_real_distribution<double> uzoom(spec.zoom_min, spec.zoom_max);
  std::uniform_real_distribution<double> utr(-spec.translate_range_px,
                                             spec.translate_range_px);
  std::uniform_real_distribution<double> ushear(-spec.shear_range,
                                                spec.shear_range);
  const double rot = urot(rng) * CV_PI / 180.0;
  const double zoom = uzoom(rng);
  const double tx = utr(rng), ty = utr(rng);
  const double shear = ushear(rng);

  const double cx = 0.5 * (map.cols - 1), cy = 0.5 * (map.rows - 1);
  // M = R(rot) * zoom * shear, applied about the center, then translate:
  // S = [[1, shear], [0, 1]], R = [[a, -b], [b, a]].
  const double a = zoom * std::cos(rot), b = zoom * std::sin(rot);
  const double m00 = a, m01 = a * shear - b;
  const double m10 = b, m11 = b * shear + a;
  const cv::Matx23d m(m00, m01, cx - m00 * cx - m01 * cy + tx,
                      m10, m11, cy - m10 * cx - m11 * cy + ty);

  cv::Mat out;
  cv::warpAffine(map, out, m, map.size(), cv::INTER_LINEAR,
                 cv::BORDER_CONSTANT, cv::Scalar(0));
  cv::min(out, 1.0f, out);
  cv::max(out, 0.0f, out);
  return out;
}

cv::Mat apply_rain(const cv::Mat& image, const cv::Mat& map, Level level,
                   const RainSpec& spec) {
  CV_Assert(image.type() == CV_32FC3);
  CV_Assert(map.type() == CV_32FC1);
  if (image.size() != map.size())
    throw InputError("apply_rain: image/map shape mismatch");

  // erode into a fresh Mat: assigning `map` first would share its buffer and
  // cv::erode would then overwrite the caller's map in place
  cv::Mat eroded;
  const int radius = RainSpec::erosion_radius(level);
  if (radius > 0) {
    const cv::Mat kernel = cv::getStructuringElement(
        cv::MORPH_RECT, cv::Size(2 * radius + 1, 2 * radius + 1));
    cv::erode(map, eroded, kernel);
  } else {
    eroded = map;
  }

  const float k = static_cast<float>(spec.blend_gain);
  cv::Mat out(image.size(), CV_32FC3);
  for (int y = 0; y < image.rows; ++y) {
    const cv::Vec3f* src = image.ptr<cv::Vec3f>(y);
    const float* r = eroded.ptr<float>(y);
    cv::Vec3f* dst = out.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.cols; ++x) {
      const float rain = k * r[x];
      for (int c = 0; c < 3; ++c) {
        // screen blend: never darkens
        const float v = 1.0f - (1.0f - src[x][c]) * (1.0f - rain);
        dst[x][c] = std::min(1.0f, std::max(0.0f, v));
      }
    }
  }
  return out;
}

double sample_mask_rate(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

cv::Mat sample_patch_mask(int height, int width, const MaskSpec& spec,
                          double rate, Rng& rng) {
  if (rate < 0 || rate > 1) throw InputError("mask rate must be in [0,1]");
  const int side = spec.patch_side();
  const int gy = (height + side - 1) / side;
  const int gx = (width + side - 1) / side;
  cv::Mat mask = cv::Mat::zeros(height, width, CV_8UC1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int py = 0; py < gy; ++py) {
    for (int px = 0; px < gx; ++px) {
      const bool drop = u(rng) < rate;
      if (!drop) continue;
      const int y1 = std::min(height, (py + 1) * side);
      const int x1 = std::min(width, (px + 1) * side);
      mask(cv::Range(py * side, y1), cv::Range(px * side, x1)) = 1;
    }
  }
  return mask;
}

void apply_patch_mask(const std::vector<cv::Mat*>& images,
                      const cv::Mat& mask) {
  CV_Assert(mask.type() == CV_8UC1);
  for (cv::Mat* img : images) {
    CV_Assert(img->type() == CV_32FC3);
    if (img->size() != mask.size())
      throw InputError("apply_patch_mask: image/mask shape mismatch");
    img->setTo(cv::Scalar(0, 0, 0), mask);
  }
}

}  // namespace stormadapt
