#include "ctcvo/image.hpp"

#include <filesystem>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace {

Image from_mat(const cv::Mat& rgb_float) {
  Image out(rgb_float.rows, rgb_float.cols);
  for (int y = 0; y < rgb_float.rows; ++y) {
    const cv::Vec3f* row = rgb_float.ptr<cv::Vec3f>(y);
    for (int x = 0; x < rgb_float.cols; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][c];
  }
  return out;
}

cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height, img.width, CV_32FC3);
  for (int y = 0; y < img.height; ++y) {
    cv::Vec3f* row = m.ptr<cv::Vec3f>(y);
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[x][c] = img.at(c, y, x);
  }
  return m;
}

}  // namespace

Image load_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingFile(path);
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return from_mat(f);
}

Image resize_image(const Image& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  cv::Mat out;
  cv::resize(to_mat(img), out, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  return from_mat(out);
}

void save_image(const Image& img, const std::string& path) {
  cv::Mat rgb8, bgr8;
  to_mat(img).convertTo(rgb8, CV_8UC3, 255.0);
  cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path, bgr8)) throw IoError("cannot write image " + path);
}

}  // namespace ctcvo
