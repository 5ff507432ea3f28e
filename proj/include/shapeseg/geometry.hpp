#pragma once

// Closed-contour geometry: periodic cubic splines through landmarks, radial
// resampling, point/contour queries. All contours are closed and densely
// sampled; distance and area queries operate on the dense polyline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "shapeseg/util.hpp"

namespace shapeseg {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2() = default;
  Point2(double px, double py) : x(px), y(py) {}

  Point2 operator+(const Point2& o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(const Point2& o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
  Point2& operator+=(const Point2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  double dot(const Point2& o) const { return x * o.x + y * o.y; }
  double cross(const Point2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
};

inline double distance(const Point2& a, const Point2& b) { return (a - b).norm(); }

// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

struct GridSpec {
  int height = 0;
  int width = 0;
  double pixel_size = 0.0;  // mm/px, isotropic

  void validate() const {
    if (height < 16 || width < 16) throw ConfigError("GridSpec: height and width must be >= 16");
    if (!(pixel_size > 0.0)) throw ConfigError("GridSpec: pixel_size must be > 0");
  }
  double extent_x_mm() const { return width * pixel_size; }
  double extent_y_mm() const { return height * pixel_size; }
  Point2 center_mm() const { return {0.5 * extent_x_mm(), 0.5 * extent_y_mm()}; }
  // Pixel (row, col) center in mm; x runs along columns, y along rows.
  Point2 pixel_center_mm(int row, int col) const {
    return {(col + 0.5) * pixel_size, (row + 0.5) * pixel_size};
  }
  Point2 mm_to_px(const Point2& p) const { return {p.x / pixel_size, p.y / pixel_size}; }
  bool contains_mm(const Point2& p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= extent_x_mm() && p.y <= extent_y_mm();
  }
};

// Periodic C2 cubic spline through n >= 3 knots, chord-length parameterized.
class PeriodicCubicSpline {
 public:
  PeriodicCubicSpline() = default;

  explicit PeriodicCubicSpline(std::span<const Point2> pts) {
    const std::size_t n = pts.size();
    if (n < 3) throw std::invalid_argument("periodic spline needs >= 3 points");
    pts_.assign(pts.begin(), pts.end());
    knots_.resize(n + 1);
    knots_[0] = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double h = distance(pts_[(k + 1) % n], pts_[k]);
      if (h < 1e-12) throw std::invalid_argument("duplicate consecutive points");
      knots_[k + 1] = knots_[k] + h;
    }
    mx_ = solve_moments(true);
    my_ = solve_moments(false);
  }

  double period() const { return knots_.back(); }
  std::size_t size() const { return pts_.size(); }
  double knot(std::size_t k) const { return knots_[k]; }

  Point2 eval(double t) const {
    const double T = period();
    t -= T * std::floor(t / T);
    // Locate interval [knots_[k], knots_[k+1]).
    std::size_t k = static_cast<std::size_t>(
        std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin());
    k = (k == 0) ? 0 : k - 1;
    if (k >= pts_.size()) k = pts_.size() - 1;
    const std::size_t k1 = (k + 1) % pts_.size();
    const double h = knots_[k + 1] - knots_[k];
    const double a = (knots_[k + 1] - t) / h;
    const double b = (t - knots_[k]) / h;
    const double h2 = h * h / 6.0;
    auto comp = [&](double pk, double pk1, double mk, double mk1) {
      return a * pk + b * pk1 + ((a * a * a - a) * mk + (b * b * b - b) * mk1) * h2;
    };
    return {comp(pts_[k].x, pts_[k1].x, mx_[k], mx_[k1]),
            comp(pts_[k].y, pts_[k1].y, my_[k], my_[k1])};
  }

 private:
  // Cyclic tridiagonal solve for the spline second derivatives.
  std::vector<double> solve_moments(bool x_axis) const {
    const std::size_t n = pts_.size();
    std::vector<double> sub(n), diag(n), sup(n), rhs(n);
    auto coord = [&](std::size_t k) { return x_axis ? pts_[k % n].x : pts_[k % n].y; };
    for (std::size_t k = 0; k < n; ++k) {
      const double hk = knots_[k + 1] - knots_[k];
      const double hkm = (k == 0) ? (knots_[n] - knots_[n - 1]) : (knots_[k] - knots_[k - 1]);
      sub[k] = hkm / 6.0;
      diag[k] = (hkm + hk) / 3.0;
      sup[k] = hk / 6.0;
      const double dk = (coord(k + 1) - coord(k)) / hk;
      const double dkm = (coord(k) - coord(k + n - 1)) / hkm;
      rhs[k] = dk - dkm;
    }
    // Sherman-Morrison reduction of the cyclic corners alpha (bottom-left)
    // and beta (top-right) to a plain tridiagonal system.
    const double alpha = sub[0];
    const double beta = sup[n - 1];
    const double gamma = -diag[0];
    std::vector<double> bb = diag;
    bb[0] = diag[0] - gamma;
    bb[n - 1] = diag[n - 1] - alpha * beta / gamma;
    std::vector<double> y = thomas(sub, bb, sup, rhs);
    std::vector<double> u(n, 0.0);
    u[0] = gamma;
    u[n - 1] = alpha;
    std::vector<double> z = thomas(sub, bb, sup, u);
    const double fact =
        (y[0] + beta * y[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    for (std::size_t k = 0; k < n; ++k) y[k] -= fact * z[k];
    return y;
  }

  static std::vector<double> thomas(const std::vector<double>& a, const std::vector<double>& b,
                                    const std::vector<double>& c, const std::vector<double>& r) {
    const std::size_t n = b.size();
    std::vector<double> cp(n), x(n);
    double bet = b[0];
    if (std::abs(bet) < 1e-300) throw std::runtime_error("singular spline system");
    x[0] = r[0] / bet;
    for (std::size_t i = 1; i < n; ++i) {
      cp[i] = c[i - 1] / bet;
      bet = b[i] - a[i] * cp[i];
      if (std::abs(bet) < 1e-300) throw std::runtime_error("singular spline system");
      x[i] = (r[i] - a[i] * x[i - 1]) / bet;
    }
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= cp[i + 1] * x[i + 1];
    return x;
  }

  std::vector<Point2> pts_;
  std::vector<double> knots_;  // n+1 entries, last = period
  std::vector<double> mx_, my_;
};

// Closed contour: landmarks, interpolating periodic spline, dense polyline.
// dense[i] connects to dense[(i+1) % dense.size()].
struct Contour {
  std::vector<Point2> landmarks;
  PeriodicCubicSpline spline;
  std::vector<Point2> dense;
  Point2 bb_min{0, 0}, bb_max{0, 0};
};

namespace detail {

inline double point_segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  const Point2 ab = b - a;
  const double L2 = ab.squared_norm();
  if (L2 <= 0.0) return distance(p, a);
  double t = (p - a).dot(ab) / L2;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + ab * t);
}

constexpr double kDenseGapTarget = 0.2;

}  // namespace detail

inline Contour closed_spline(std::span<const Point2> points) {
  if (points.size() < 4) throw std::invalid_argument("closed_spline: need >= 4 points");
  for (const Point2& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("closed_spline: non-finite point");
  }
  Contour c;
  c.landmarks.assign(points.begin(), points.end());
  c.spline = PeriodicCubicSpline(points);  // throws on duplicate consecutive points

  const double T = c.spline.period();
  // Estimate curve length, then pick a dense count that keeps the sampling
  // gap below kDenseGapTarget in the contour's own units.
  const std::size_t probe = std::max<std::size_t>(16 * points.size(), 512);
  double length = 0.0;
  Point2 prev = c.spline.eval(0.0);
  for (std::size_t i = 1; i <= probe; ++i) {
    const Point2 q = c.spline.eval(T * static_cast<double>(i) / probe);
    length += distance(prev, q);
    prev = q;
  }
  std::size_t ns = std::max<std::size_t>(
      {256, 8 * points.size(),
       static_cast<std::size_t>(std::ceil(length / detail::kDenseGapTarget))});
  c.dense.resize(ns);
  c.bb_min = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  c.bb_max = {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
  for (std::size_t i = 0; i < ns; ++i) {
    const Point2 q = c.spline.eval(T * static_cast<double>(i) / ns);
    c.dense[i] = q;
    c.bb_min.x = std::min(c.bb_min.x, q.x);
    c.bb_min.y = std::min(c.bb_min.y, q.y);
    c.bb_max.x = std::max(c.bb_max.x, q.x);
    c.bb_max.y = std::max(c.bb_max.y, q.y);
  }
  return c;
}

inline double min_distance(const Point2& p, std::span<const Point2> closed_poly) {
  const std::size_t n = closed_poly.size();
  double best = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i < n; ++i) {
    best = std::min(best,
                    detail::point_segment_distance(p, closed_poly[i], closed_poly[(i + 1) % n]));
  }
  return best;
}

inline double min_distance(const Point2& p, const Contour& c) { return min_distance(p, c.dense); }

// Even-odd rule on the dense polyline; points within 1e-9 of the boundary
// count as inside.
inline bool point_in_contour(const Point2& p, const Contour& c) {
  if (min_distance(p, c) <= 1e-9) return true;
  const std::size_t n = c.dense.size();
  bool inside = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = c.dense[i];
    const Point2& b = c.dense[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (xint > p.x) inside = !inside;
    }
  }
  return inside;
}

inline double polygon_area(std::span<const Point2> points) {
  if (points.size() < 3) throw std::invalid_argument("polygon_area: need >= 3 points");
  double twice = 0.0;
  const std::size_t n = points.size();
  for (std::size_t i = 0; i < n; ++i) twice += points[i].cross(points[(i + 1) % n]);
  return 0.5 * std::abs(twice);
}

inline double polygon_area(const Contour& c) { return polygon_area(std::span(c.dense)); }

// Intersections of the ray origin + t*dir (t > 0) with the dense polyline.
// Returns the ray parameters t of distinct hits, ascending.
inline std::vector<double> ray_contour_hits(const Point2& origin, const Point2& dir,
                                            const Contour& c) {
  std::vector<double> ts;
  const std::size_t n = c.dense.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = c.dense[i];
    const Point2 s = c.dense[(i + 1) % n] - a;
    const double denom = dir.cross(s);
    if (std::abs(denom) < 1e-15) continue;
    const Point2 qp = a - origin;
    const double t = qp.cross(s) / denom;
    const double u = qp.cross(dir) / denom;
    // Half-open in u so shared vertices are hit once; the small slack below 0
    // closes the floating-point gap at vertices, duplicates are merged later.
    if (t > 1e-9 && u >= -1e-9 && u < 1.0) ts.push_back(t);
  }
  std::sort(ts.begin(), ts.end());
  std::vector<double> uniq;
  for (double t : ts) {
    if (uniq.empty() || t - uniq.back() > 1e-6 * (1.0 + t)) uniq.push_back(t);
  }
  return uniq;
}

// Sample N points on the contour along rays from center at angles
// theta + 2*pi*k/N. Requires a star-shaped contour w.r.t. center.
inline std::vector<Point2> radial_resample(const Contour& c, const Point2& center, double theta,
                                           int N) {
  if (N < 1) throw std::invalid_argument("radial_resample: N must be >= 1");
  if (min_distance(center, c) <= 1e-9 || !point_in_contour(center, c))
    throw std::invalid_argument("radial_resample: center not strictly inside contour");
  std::vector<Point2> out;
  out.reserve(N);
  for (int k = 0; k < N; ++k) {
    const double ang = theta + 2.0 * M_PI * k / N;
    const Point2 dir{std::cos(ang), std::sin(ang)};
    const std::vector<double> hits = ray_contour_hits(center, dir, c);
    if (hits.empty())
      throw std::runtime_error("radial_resample: ray " + std::to_string(k) + " misses contour");
    if (hits.size() > 1)
      throw std::runtime_error("radial_resample: contour not star-shaped for ray " +
                               std::to_string(k));
    out.push_back(center + dir * hits[0]);
  }
  return out;
}

// Segment-intersection simplicity test on the dense polyline. Adjacent
// segments share a vertex and are skipped.
inline bool contour_is_simple(const Contour& c) {
  const std::size_t n = c.dense.size();
  auto seg = [&](std::size_t i) {
    return std::pair<Point2, Point2>{c.dense[i], c.dense[(i + 1) % n]};
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;  // adjacent across the seam
      auto [a, b] = seg(i);
      auto [p, q] = seg(j);
      const Point2 r = b - a, s = q - p;
      const double denom = r.cross(s);
      const Point2 pa = p - a;
      if (std::abs(denom) < 1e-15) continue;
      const double t = pa.cross(s) / denom;
      const double u = pa.cross(r) / denom;
      if (t > 1e-12 && t < 1.0 - 1e-12 && u > 1e-12 && u < 1.0 - 1e-12) return false;
    }
  }
  return true;
}

// Uniform-grid index over the segments of a closed polyline; accelerates
// nearest-segment queries for per-pixel distance maps and boundary metrics.
// Holds a view of the polyline, which must outlive the grid.
class SegmentGrid {
 public:
  explicit SegmentGrid(std::span<const Point2> closed_poly) : poly_(closed_poly) {
    const std::size_t n = poly_.size();
    bb_min_ = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
    bb_max_ = {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      bb_min_.x = std::min(bb_min_.x, poly_[i].x);
      bb_min_.y = std::min(bb_min_.y, poly_[i].y);
      bb_max_.x = std::max(bb_max_.x, poly_[i].x);
      bb_max_.y = std::max(bb_max_.y, poly_[i].y);
      total += distance(poly_[i], poly_[(i + 1) % n]);
    }
    const double span_x = std::max(bb_max_.x - bb_min_.x, 1e-9);
    const double span_y = std::max(bb_max_.y - bb_min_.y, 1e-9);
    cell_ = std::max({2.0 * total / static_cast<double>(n), span_x / 64.0, span_y / 64.0, 1e-9});
    nx_ = static_cast<int>(span_x / cell_) + 1;
    ny_ = static_cast<int>(span_y / cell_) + 1;
    cells_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& a = poly_[i];
      const Point2& b = poly_[(i + 1) % n];
      const int cx0 = cell_x(std::min(a.x, b.x));
      const int cx1 = cell_x(std::max(a.x, b.x));
      const int cy0 = cell_y(std::min(a.y, b.y));
      const int cy1 = cell_y(std::max(a.y, b.y));
      for (int cy = cy0; cy <= cy1; ++cy)
        for (int cx = cx0; cx <= cx1; ++cx)
          cells_[static_cast<std::size_t>(cy) * nx_ + cx].push_back(static_cast<int>(i));
    }
  }

  // Exact min distance from p to the polyline (identical to brute force).
  double min_distance(const Point2& p) const {
    const int pcx = cell_x(p.x);
    const int pcy = cell_y(p.y);
    double best = std::numeric_limits<double>::max();
    const int rmax = nx_ + ny_;
    for (int r = 0; r <= rmax; ++r) {
      for (int cy = pcy - r; cy <= pcy + r; ++cy) {
        if (cy < 0 || cy >= ny_) continue;
        const bool edge_row = (cy == pcy - r || cy == pcy + r);
        const int step = edge_row ? 1 : 2 * r;
        for (int cx = pcx - r; cx <= pcx + r; cx += std::max(step, 1)) {
          if (cx < 0 || cx >= nx_) continue;
          if (cell_lower_bound(p, cx, cy) >= best) continue;
          for (int si : cells_[static_cast<std::size_t>(cy) * nx_ + cx]) {
            const Point2& a = poly_[static_cast<std::size_t>(si)];
            const Point2& b = poly_[(static_cast<std::size_t>(si) + 1) % poly_.size()];
            best = std::min(best, detail::point_segment_distance(p, a, b));
          }
        }
      }
      // Everything beyond ring r lies outside the visited block; stop once
      // the block boundary is farther than the current best.
      const double bx0 = bb_min_.x + (pcx - r) * cell_;
      const double bx1 = bb_min_.x + (pcx + r + 1) * cell_;
      const double by0 = bb_min_.y + (pcy - r) * cell_;
      const double by1 = bb_min_.y + (pcy + r + 1) * cell_;
      if (p.x >= bx0 && p.x <= bx1 && p.y >= by0 && p.y <= by1) {
        const double outer =
            std::min(std::min(p.x - bx0, bx1 - p.x), std::min(p.y - by0, by1 - p.y));
        if (outer > best) break;
      }
    }
    return best;
  }

 private:
  int cell_x(double x) const {
    return std::clamp(static_cast<int>((x - bb_min_.x) / cell_), 0, nx_ - 1);
  }
  int cell_y(double y) const {
    return std::clamp(static_cast<int>((y - bb_min_.y) / cell_), 0, ny_ - 1);
  }
  double cell_lower_bound(const Point2& p, int cx, int cy) const {
    const double x0 = bb_min_.x + cx * cell_;
    const double y0 = bb_min_.y + cy * cell_;
    const double dx = std::max({x0 - p.x, p.x - (x0 + cell_), 0.0});
    const double dy = std::max({y0 - p.y, p.y - (y0 + cell_), 0.0});
    return std::hypot(dx, dy);
  }

  std::span<const Point2> poly_;
  std::vector<std::vector<int>> cells_;
  Point2 bb_min_, bb_max_;
  double cell_ = 1.0;
  int nx_ = 1, ny_ = 1;
};

}  // namespace shapeseg
