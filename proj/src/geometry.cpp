#include "grnr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <tuple>
#include <utility>

#include "grnr/errors.hpp"

namespace grnr::geometry {

Vertex::Vertex(double x_, double y_)
    : x(std::clamp(x_, 0.0, 1.0)), y(std::clamp(y_, 0.0, 1.0)) {}

std::vector<double> to_flat(const Polygon& poly) {
  std::vector<double> out;
  out.reserve(poly.size() * 2);
  for (const auto& v : poly.vertices) {
    out.push_back(v.x);
    out.push_back(v.y);
  }
  return out;
}

Polygon from_flat(std::span<const double> coords) {
  if (coords.size() % 2 != 0) {
    throw InvalidPolygon("flat coordinate array has odd length " +
                         std::to_string(coords.size()));
  }
  Polygon p;
  p.vertices.reserve(coords.size() / 2);
  for (std::size_t i = 0; i + 1 < coords.size(); i += 2) {
    p.vertices.emplace_back(coords[i], coords[i + 1]);
  }
  return p;
}

Rect intersect(const Rect& a, const Rect& b) {
  const double x0 = std::max(a.x, b.x);
  const double y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.x + a.w, b.x + b.w);
  const double y1 = std::min(a.y + a.h, b.y + b.h);
  return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

MaskRaster::MaskRaster(int width, int height) : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw ShapeError("mask dimensions must be >= 1, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

std::size_t MaskRaster::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

namespace {

void require_valid(const Polygon& poly) {
  if (poly.size() < 3) {
    throw InvalidPolygon("polygon needs at least 3 vertices, got " +
                         std::to_string(poly.size()));
  }
}

// Exact floating-point expansion arithmetic (Shewchuk). An expansion is a
// list of non-overlapping doubles in increasing magnitude whose exact sum is
// the represented value.
void two_sum(double a, double b, double& s, double& e) {
  s = a + b;
  const double bv = s - a;
  const double av = s - bv;
  e = (a - av) + (b - bv);
}

void grow_expansion(std::vector<double>& e, double b) {
  double q = b;
  std::vector<double> out;
  out.reserve(e.size() + 1);
  for (double c : e) {
    double s = 0.0;
    double err = 0.0;
    two_sum(q, c, s, err);
    q = s;
    if (err != 0.0) out.push_back(err);
  }
  if (q != 0.0) out.push_back(q);
  e.swap(out);
}

// Twice the signed area as an exact expansion.
std::vector<double> doubled_area_expansion(const Polygon& poly) {
  std::vector<double> e;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vertex& a = poly.vertices[i];
    const Vertex& b = poly.vertices[(i + 1) % n];
    const double p1 = a.x * b.y;
    const double e1 = std::fma(a.x, b.y, -p1);
    const double p2 = b.x * a.y;
    const double e2 = std::fma(b.x, a.y, -p2);
    grow_expansion(e, p1);
    grow_expansion(e, e1);
    grow_expansion(e, -p2);
    grow_expansion(e, -e2);
  }
  return e;
}

auto start_key(const Vertex& v) { return std::make_tuple(v.x + v.y, v.y, v.x); }

std::size_t start_index(const std::vector<Vertex>& vs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < vs.size(); ++i) {
    if (start_key(vs[i]) < start_key(vs[best])) best = i;
  }
  return best;
}

}  // namespace

double polygon_signed_area(const Polygon& poly) {
  require_valid(poly);
  const auto e = doubled_area_expansion(poly);
  if (e.empty()) return 0.0;
  double sum = 0.0;
  for (double c : e) sum += c;
  // The largest component carries the exact sign.
  if ((sum > 0.0) != (e.back() > 0.0)) sum = e.back();
  return sum / 2.0;
}

Polygon normalize_polygon(const Polygon& poly) {
  require_valid(poly);
  std::vector<Vertex> vs = poly.vertices;
  if (polygon_signed_area(poly) < 0.0) std::reverse(vs.begin(), vs.end());
  const auto first = start_index(vs);
  std::rotate(vs.begin(), vs.begin() + static_cast<std::ptrdiff_t>(first), vs.end());
  return Polygon(std::move(vs));
}

bool is_canonical(const Polygon& poly) {
  return poly.size() >= 3 && normalize_polygon(poly) == poly;
}

double polygon_perimeter(const Polygon& poly) {
  require_valid(poly);
  double total = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vertex& a = poly.vertices[i];
    const Vertex& b = poly.vertices[(i + 1) % n];
    total += std::hypot(b.x - a.x, b.y - a.y);
  }
  return total;
}

Vertex polygon_centroid(const Polygon& poly) {
  require_valid(poly);
  const std::size_t n = poly.size();
  double a2 = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vertex& a = poly.vertices[i];
    const Vertex& b = poly.vertices[(i + 1) % n];
    const double cross = a.x * b.y - b.x * a.y;
    a2 += cross;
    cx += (a.x + b.x) * cross;
    cy += (a.y + b.y) * cross;
  }
  if (std::abs(a2) < 1e-15) {
    // Degenerate: fall back to the vertex mean.
    double mx = 0.0;
    double my = 0.0;
    for (const auto& v : poly.vertices) {
      mx += v.x;
      my += v.y;
    }
    return {mx / static_cast<double>(n), my / static_cast<double>(n)};
  }
  return {cx / (3.0 * a2), cy / (3.0 * a2)};
}

Polygon resample_polygon(const Polygon& poly, int n_v) {
  require_valid(poly);
  if (n_v < 3) {
    throw InvalidPolygon("resample target must be >= 3 vertices, got " +
                         std::to_string(n_v));
  }
  const auto& vs = poly.vertices;
  const std::size_t n = vs.size();
  std::vector<double> lengths(n);
  double perimeter = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vertex& a = vs[i];
    const Vertex& b = vs[(i + 1) % n];
    lengths[i] = std::hypot(b.x - a.x, b.y - a.y);
    perimeter += lengths[i];
  }
  if (!(perimeter > 0.0)) {
    throw DegeneratePolygon("cannot resample a zero-perimeter polygon");
  }

  std::vector<Vertex> out;
  out.reserve(static_cast<std::size_t>(n_v));
  out.push_back(vs[0]);
  std::size_t edge = 0;
  double edge_start = 0.0;
  for (int j = 1; j < n_v; ++j) {
    const double s = perimeter * static_cast<double>(j) / static_cast<double>(n_v);
    while (edge + 1 < n && edge_start + lengths[edge] < s) {
      edge_start += lengths[edge];
      ++edge;
    }
    const Vertex& a = vs[edge];
    const Vertex& b = vs[(edge + 1) % n];
    const double t =
        lengths[edge] > 0.0 ? std::clamp((s - edge_start) / lengths[edge], 0.0, 1.0) : 0.0;
    out.emplace_back(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
  }
  return normalize_polygon(Polygon(std::move(out)));
}

MaskRaster rasterize(std::span<const Polygon> polys, int width, int height) {
  MaskRaster mask(width, height);
  std::vector<double> xs;
  for (const auto& poly : polys) {
    require_valid(poly);
    const auto& vs = poly.vertices;
    const std::size_t n = vs.size();
    double ymin = 1.0;
    double ymax = 0.0;
    for (const auto& v : vs) {
      ymin = std::min(ymin, v.y);
      ymax = std::max(ymax, v.y);
    }
    const int row_lo = std::max(0, static_cast<int>(std::floor(ymin * height - 0.5)) - 1);
    const int row_hi = std::min(height - 1, static_cast<int>(std::ceil(ymax * height - 0.5)) + 1);
    for (int py = row_lo; py <= row_hi; ++py) {
      const double yc = (py + 0.5) / height;
      xs.clear();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vertex& vi = vs[i];
        const Vertex& vj = vs[j];
        if ((vi.y > yc) != (vj.y > yc)) {
          xs.push_back((vj.x - vi.x) * (yc - vi.y) / (vj.y - vi.y) + vi.x);
        }
      }
      std::sort(xs.begin(), xs.end());
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const double x0 = xs[k];
        const double x1 = xs[k + 1];
        // First pixel whose center is >= x0.
        int px = std::clamp(static_cast<int>(std::ceil(x0 * width - 0.5)), 0, width);
        while (px > 0 && (px - 1 + 0.5) / width >= x0) --px;
        while (px < width && (px + 0.5) / width < x0) ++px;
        for (; px < width && (px + 0.5) / width < x1; ++px) mask.set(px, py);
      }
    }
  }
  return mask;
}

double mask_iou(const MaskRaster& a, const MaskRaster& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ShapeError("mask_iou dimension mismatch: " + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) +
                     "x" + std::to_string(b.height()));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto& ab = a.bits();
  const auto& bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += (ab[i] & bb[i]);
    uni += (ab[i] | bb[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void write_pgm(const MaskRaster& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open " + path + " for writing");
  out << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
  for (auto b : mask.bits()) out.put(static_cast<char>(b ? 255 : 0));
}

MaskRaster read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open mask " + path);
  auto header_int = [&] {
    while (true) {
      in >> std::ws;
      if (in.peek() != '#') break;
      std::string comment;
      std::getline(in, comment);
    }
    int v = 0;
    if (!(in >> v)) throw InvalidInput(path + ": malformed PGM header");
    return v;
  };
  std::string magic;
  in >> magic;
  if (magic != "P5") throw InvalidInput(path + ": only binary PGM (P5) is supported");
  const int w = header_int();
  const int h = header_int();
  const int maxval = header_int();
  if (w < 1 || h < 1) throw InvalidInput(path + ": empty mask");
  if (maxval <= 0 || maxval > 255) throw InvalidInput(path + ": unsupported maxval");
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw InvalidInput(path + ": truncated raster");
  MaskRaster m(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(x, y, 2 * raw[static_cast<std::size_t>(y) * w + x] > maxval);
  }
  return m;
}

namespace {

using Corner = std::pair<int, int>;  // pixel-corner lattice point (x, y)

double point_segment_distance(const Corner& p, const Corner& a, const Corner& b) {
  const double dx = b.first - a.first, dy = b.second - a.second;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.first - a.first) * dx + (p.second - a.second) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.first - (a.first + t * dx), p.second - (a.second + t * dy));
}

void douglas_peucker(const std::vector<Corner>& pts, std::size_t lo, std::size_t hi, double tol,
                     std::vector<bool>& keep) {
  if (hi <= lo + 1) return;
  double worst = -1.0;
  std::size_t at = lo;
  for (std::size_t i = lo + 1; i < hi; ++i) {
    const double d = point_segment_distance(pts[i], pts[lo], pts[hi]);
    if (d > worst) {
      worst = d;
      at = i;
    }
  }
  if (worst > tol) {
    keep[at] = true;
    douglas_peucker(pts, lo, at, tol, keep);
    douglas_peucker(pts, at, hi, tol, keep);
  }
}

// Closed-ring simplification anchored at vertex 0 and the vertex farthest from it.
std::vector<Corner> simplify_ring(const std::vector<Corner>& ring, double tol) {
  const std::size_t n = ring.size();
  std::size_t far = 0;
  double best = -1.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = std::hypot(ring[i].first - ring[0].first, ring[i].second - ring[0].second);
    if (d > best) {
      best = d;
      far = i;
    }
  }
  std::vector<Corner> pts(ring);
  pts.push_back(ring[0]);
  std::vector<bool> keep(pts.size(), false);
  keep[0] = keep[far] = true;
  douglas_peucker(pts, 0, far, tol, keep);
  douglas_peucker(pts, far, n, tol, keep);
  std::vector<Corner> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) out.push_back(ring[i]);
  }
  return out;
}

}  // namespace

std::vector<Polygon> trace_mask(const MaskRaster& mask, double tolerance_px, std::size_t* holes_dropped) {
  if (!(tolerance_px >= 0.0)) throw InvalidInput("trace tolerance must be non-negative");
  const int w = mask.width(), h = mask.height();
  auto fg = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && mask.at(x, y); };

  // Boundary edges oriented clockwise on screen, so the foreground lies to
  // the right of every edge. At most two edges leave any corner.
  std::map<Corner, std::vector<Corner>> out_dirs;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!fg(x, y)) continue;
      if (!fg(x, y - 1)) out_dirs[{x, y}].push_back({1, 0});
      if (!fg(x + 1, y)) out_dirs[{x + 1, y}].push_back({0, 1});
      if (!fg(x, y + 1)) out_dirs[{x + 1, y + 1}].push_back({-1, 0});
      if (!fg(x - 1, y)) out_dirs[{x, y + 1}].push_back({0, -1});
    }
  }

  std::vector<Polygon> polys;
  std::size_t holes = 0;
  for (auto& [start, dirs] : out_dirs) {
    while (!dirs.empty()) {
      std::vector<Corner> ring;
      Corner at = start;
      Corner dir = dirs.back();
      dirs.pop_back();
      while (true) {
        ring.push_back(at);
        at = {at.first + dir.first, at.second + dir.second};
        if (at == start) break;
        auto& choices = out_dirs.at(at);
        // Prefer the right turn, then straight, then left; the right turn
        // keeps diagonal neighbours in separate rings.
        const Corner order[3] = {{-dir.second, dir.first}, dir, {dir.second, -dir.first}};
        bool moved = false;
        for (const auto& d : order) {
          const auto it = std::find(choices.begin(), choices.end(), d);
          if (it != choices.end()) {
            choices.erase(it);
            dir = d;
            moved = true;
            break;
          }
        }
        if (!moved) throw InvalidInput("mask boundary tracing failed to close a ring");
      }
      // Drop collinear corners.
      std::vector<Corner> corners;
      const std::size_t n = ring.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto& a = ring[(i + n - 1) % n];
        const auto& b = ring[i];
        const auto& c = ring[(i + 1) % n];
        const long cross = static_cast<long>(b.first - a.first) * (c.second - b.second) -
                           static_cast<long>(b.second - a.second) * (c.first - b.first);
        if (cross != 0) corners.push_back(b);
      }
      long twice_area = 0;
      for (std::size_t i = 0; i < corners.size(); ++i) {
        const auto& a = corners[i];
        const auto& b = corners[(i + 1) % corners.size()];
        twice_area += static_cast<long>(a.first) * b.second - static_cast<long>(b.first) * a.second;
      }
      if (twice_area < 0) {
        ++holes;
        continue;
      }
      const auto simple = tolerance_px > 0.0 ? simplify_ring(corners, tolerance_px) : corners;
      if (simple.size() < 3) continue;
      Polygon p;
      for (const auto& c : simple) p.vertices.emplace_back(static_cast<double>(c.first) / w, static_cast<double>(c.second) / h);
      polys.push_back(std::move(p));
    }
  }
  if (holes_dropped != nullptr) *holes_dropped = holes;
  return polys;
}

}  // namespace grnr::geometry
