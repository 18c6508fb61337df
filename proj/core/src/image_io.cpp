#include "stormadapt/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stormadapt/common.hpp"

namespace stormadapt {

cv::Mat load_image_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw InputError("failed to decode image: " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat out;
  rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

void save_image_png(const std::string& path, const cv::Mat& image) {
  CV_Assert(image.type() == CV_32FC3);
  cv::Mat u8;
  image.convertTo(u8, CV_8UC3, 255.0);
  cv::Mat bgr;
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr))
    throw InputError("failed to write image: " + path);
}

cv::Mat load_depth_png(const std::string& path) {
  cv::Mat mm = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (mm.empty()) throw InputError("failed to decode depth map: " + path);
  if (mm.type() != CV_16UC1)
    throw InputError("depth map is not 16-bit single channel: " + path);
  // convertTo applies its scale in float precision, which perturbs exact
  // millimeter values; divide in double so the mm grid round-trips bit-exact
  cv::Mat out(mm.rows, mm.cols, CV_32FC1);
  for (int y = 0; y < mm.rows; ++y)
    for (int x = 0; x < mm.cols; ++x)
      out.at<float>(y, x) =
          static_cast<float>(mm.at<std::uint16_t>(y, x) / 1000.0);
  return out;
}

void save_depth_png(const std::string& path, const cv::Mat& depth_m) {
  CV_Assert(depth_m.type() == CV_32FC1);
  double mn = 0, mx = 0;
  cv::minMaxLoc(depth_m, &mn, &mx);
  if (mn < 0) throw InputError("depth map has negative values");
  if (mx * 1000.0 > 65535.0)
    throw InputError("depth exceeds 65.535 m, not representable in 16-bit mm");
  cv::Mat mm;
  depth_m.convertTo(mm, CV_16UC1, 1000.0);
  if (!cv::imwrite(path, mm))
    throw InputError("failed to write depth map: " + path);
}

cv::Mat quantize8(const cv::Mat& image) {
  CV_Assert(image.type() == CV_32FC3);
  cv::Mat u8, out;
  image.convertTo(u8, CV_8UC3, 255.0);
  u8.convertTo(out, CV_32FC3, 1.0 / 255.0);
  return out;
}

}  // namespace stormadapt
