#pragma once

#include <string>
#include <vector>

namespace ctcvo {

/// RGB image, planar float channels in [0, 1]; index = (c*height + y)*width + x.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, 0.0f) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Decodes any format OpenCV reads and converts BGR to RGB.
Image load_image(const std::string& path);
/// Bilinear resize.
Image resize_image(const Image& img, int height, int width);
/// Writes an 8-bit image; format from the extension.
void save_image(const Image& img, const std::string& path);

}  // namespace ctcvo
