#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace grnr::geometry {

// A polygon vertex in normalized image coordinates: x is a fraction of the
// image width, y a fraction of the height, y grows downward.
struct Vertex {
  double x = 0.0;
  double y = 0.0;

  Vertex() = default;
  Vertex(double x_, double y_);  // clamps into [0,1]

  friend bool operator==(const Vertex&, const Vertex&) = default;
};

struct Polygon {
  std::vector<Vertex> vertices;

  Polygon() = default;
  explicit Polygon(std::vector<Vertex> v) : vertices(std::move(v)) {}

  std::size_t size() const { return vertices.size(); }
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

// Flat [x1,y1,...,xn,yn] serialization used by manifests and prediction files.
std::vector<double> to_flat(const Polygon& poly);
Polygon from_flat(std::span<const double> coords);

// Axis-aligned rectangle in pixel units.
struct Rect {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w > 0.0 && h > 0.0 ? w * h : 0.0; }
  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

Rect intersect(const Rect& a, const Rect& b);

class MaskRaster {
 public:
  MaskRaster(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int px, int py) const { return bits_[index(px, py)] != 0; }
  void set(int px, int py, bool v = true) { bits_[index(px, py)] = v ? 1 : 0; }
  std::size_t count() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const MaskRaster&, const MaskRaster&) = default;

 private:
  std::size_t index(int px, int py) const {
    return static_cast<std::size_t>(py) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(px);
  }
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

// Shoelace area, positive for clockwise order in y-down image coordinates.
// The sign is computed exactly, so it is invariant under rotation of the
// vertex sequence and flips exactly under reversal.
double polygon_signed_area(const Polygon& poly);

// Clockwise, starting at the vertex minimizing (x+y, y, x).
Polygon normalize_polygon(const Polygon& poly);
bool is_canonical(const Polygon& poly);

double polygon_perimeter(const Polygon& poly);
Vertex polygon_centroid(const Polygon& poly);

// n_v samples at uniform arclength along the closed boundary of a canonical
// polygon, first sample at the start vertex.
Polygon resample_polygon(const Polygon& poly, int n_v);

// Pixel (px,py) is set iff its center lies inside any polygon (even-odd).
MaskRaster rasterize(std::span<const Polygon> polys, int width, int height);

double mask_iou(const MaskRaster& a, const MaskRaster& b);

// Binary PGM (P5, maxval 255).
void write_pgm(const MaskRaster& mask, const std::string& path);
// Reads a P5 graymap; a pixel is set when its value exceeds half of maxval.
MaskRaster read_pgm(const std::string& path);

// Outer boundaries of the 4-connected foreground components, as polygons in
// normalized coordinates along pixel edges, simplified with Douglas-Peucker
// at tolerance_px pixels. Diagonally touching pixels belong to separate
// components. Holes are not representable and are dropped; their number is
// reported through holes_dropped. Components whose outline simplifies below
// three vertices are dropped as well.
std::vector<Polygon> trace_mask(const MaskRaster& mask, double tolerance_px,
                                std::size_t* holes_dropped = nullptr);

}  // namespace grnr::geometry
