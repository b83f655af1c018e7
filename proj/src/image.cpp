#include "grnr/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "grnr/errors.hpp"

namespace grnr {

ImagePlane::ImagePlane(int w, int h, double fill) : width(w), height(h) {
  if (w < 1 || h < 1) {
    throw ShapeError("image dimensions must be >= 1, got " + std::to_string(w) + "x" +
                     std::to_string(h));
  }
  data.assign(static_cast<std::size_t>(channels) * w * h, fill);
}

ImagePlane resize_bilinear(const ImagePlane& img, int width, int height) {
  if (!img.valid()) throw ShapeError("resize of an invalid image");
  if (img.width == width && img.height == height) return img;
  ImagePlane out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < ImagePlane::channels; ++c) {
        const double top = img.at(c, x0, y0) * (1.0 - tx) + img.at(c, x1, y0) * tx;
        const double bot = img.at(c, x0, y1) * (1.0 - tx) + img.at(c, x1, y1) * tx;
        out.at(c, x, y) = top * (1.0 - ty) + bot * ty;
      }
    }
  }
  return out;
}

ImagePlane crop(const ImagePlane& img, int x, int y, int width, int height) {
  if (x < 0 || y < 0 || width < 1 || height < 1 || x + width > img.width ||
      y + height > img.height) {
    throw ShapeError("crop window (" + std::to_string(x) + "," + std::to_string(y) + "," +
                     std::to_string(width) + "," + std::to_string(height) +
                     ") outside image " + std::to_string(img.width) + "x" +
                     std::to_string(img.height));
  }
  ImagePlane out(width, height);
  for (int c = 0; c < ImagePlane::channels; ++c) {
    for (int r = 0; r < height; ++r) {
      for (int col = 0; col < width; ++col) out.at(c, col, r) = img.at(c, x + col, y + r);
    }
  }
  return out;
}

namespace {

int read_header_int(std::istream& in) {
  int value = 0;
  while (true) {
    in >> std::ws;
    if (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    break;
  }
  if (!(in >> value)) throw InvalidInput("malformed PPM header");
  return value;
}

}  // namespace

ImagePlane load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw InvalidInput(path + ": only binary PPM (P6) is supported");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (maxval <= 0 || maxval > 255) throw InvalidInput(path + ": unsupported maxval");
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw InvalidInput(path + ": truncated raster");
  }
  ImagePlane img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, x, y) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] /
                          static_cast<double>(maxval);
      }
    }
  }
  return img;
}

void save_ppm(const ImagePlane& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open " + path + " for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, x, y), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
}

}  // namespace grnr
