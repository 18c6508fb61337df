#pragma once

#include <opencv2/core.hpp>
#include <string>

namespace stormadapt {

// Convention: color images are CV_32FC3 in [0,1] (RGB channel order),
// depth maps are CV_32FC1 metric meters. On disk: 8-bit PNG for color,
// 16-bit single-channel PNG holding millimeters for depth.

cv::Mat load_image_png(const std::string& path);
void save_image_png(const std::string& path, const cv::Mat& image);

cv::Mat load_depth_png(const std::string& path);
void save_depth_png(const std::string& path, const cv::Mat& depth_m);

// Snaps a float image onto the 8-bit grid so save/load round-trips exactly.
cv::Mat quantize8(const cv::Mat& image);

}  // namespace stormadapt
