#pragma once

#include <string>
#include <vector>

namespace grnr {

// Three-channel image, channel-major (c, y, x), values in [0,1].
struct ImagePlane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  ImagePlane() = default;
  ImagePlane(int w, int h, double fill = 0.0);

  static constexpr int channels = 3;

  double& at(int c, int x, int y) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int x, int y) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool valid() const {
    return width >= 1 && height >= 1 &&
           data.size() == static_cast<std::size_t>(channels) * width * height;
  }

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

// Bilinear resampling with pixel-center alignment.
ImagePlane resize_bilinear(const ImagePlane& img, int width, int height);

// Integer crop; the window must lie inside the image.
ImagePlane crop(const ImagePlane& img, int x, int y, int width, int height);

// Binary PPM (P6, maxval 255).
ImagePlane load_ppm(const std::string& path);
void save_ppm(const ImagePlane& img, const std::string& path);

}  // namespace grnr
