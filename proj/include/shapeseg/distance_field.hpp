#pragma once

// Signed Euclidean distance maps against contour polylines, soft/hard
// binarization, and zero-level contour extraction (marching squares).
// Distance map values are in pixel units, negative inside the structure.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "shapeseg/geometry.hpp"
#include "shapeseg/shape_model.hpp"

namespace shapeseg {

struct DistanceMap {
  GridSpec grid;
  std::vector<float> values;  // row-major H x W, px units

  float& at(int row, int col) { return values[static_cast<std::size_t>(row) * grid.width + col]; }
  float at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * grid.width + col];
  }
};

struct SoftMask {
  GridSpec grid;
  double alpha = 0.0;
  std::vector<float> values;  // in (0, 1)
};

struct BinaryMask {
  GridSpec grid;
  std::vector<std::uint8_t> values;

  std::uint8_t at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * grid.width + col];
  }
  std::size_t count() const {
    std::size_t s = 0;
    for (auto v : values) s += v;
    return s;
  }
};

struct ClassMaps {
  DistanceMap endo;
  DistanceMap epi;
};

namespace detail {

inline bool point_in_closed_poly(const Point2& p, std::span<const Point2> poly) {
  const std::size_t n = poly.size();
  bool inside = false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (xint > p.x) inside = !inside;
    }
  }
  return inside;
}

}  // namespace detail

// Signed distance in px from every pixel center to the contour.
inline DistanceMap signed_distance(const Contour& contour, const GridSpec& grid) {
  grid.validate();
  if (contour.dense.size() < 3) throw std::invalid_argument("signed_distance: degenerate contour");
  // Work in px coordinates: pixel (i, j) center sits at (j + 0.5, i + 0.5).
  std::vector<Point2> poly(contour.dense.size());
  for (std::size_t i = 0; i < poly.size(); ++i) {
    poly[i] = {contour.dense[i].x / grid.pixel_size, contour.dense[i].y / grid.pixel_size};
  }
  const SegmentGrid accel(poly);
  DistanceMap out;
  out.grid = grid;
  out.values.resize(static_cast<std::size_t>(grid.height) * grid.width);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const Point2 p{j + 0.5, i + 0.5};
      const double d = accel.min_distance(p);
      const bool inside = d <= 1e-9 || detail::point_in_closed_poly(p, poly);
      out.at(i, j) = static_cast<float>(inside ? -d : d);
    }
  }
  return out;
}

// Sigmoid conversion S = e^{-aD} / (1 + e^{-aD}), overflow-safe. Both
// branches share the exp(-a|D|) evaluation so S(-D) == 1 - S(D) exactly.
inline double soft_binarize_value(double d, double alpha) {
  const double e = std::exp(-alpha * std::abs(d));
  const double s_far = e / (1.0 + e);  // value at distance |d| outside
  return d >= 0.0 ? s_far : 1.0 - s_far;
}

inline SoftMask soft_binarize(const DistanceMap& d, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("soft_binarize: alpha must be > 0");
  SoftMask m;
  m.grid = d.grid;
  m.alpha = alpha;
  m.values.resize(d.values.size());
  for (std::size_t i = 0; i < d.values.size(); ++i)
    m.values[i] = static_cast<float>(soft_binarize_value(d.values[i], alpha));
  return m;
}

inline BinaryMask hard_binarize(const DistanceMap& d) {
  BinaryMask m;
  m.grid = d.grid;
  m.values.resize(d.values.size());
  for (std::size_t i = 0; i < d.values.size(); ++i) m.values[i] = d.values[i] < 0.0f ? 1 : 0;
  return m;
}

inline ClassMaps maps_from_landmarks(const LandmarkShape& shape, const GridSpec& grid) {
  const Contour endo = closed_spline(shape.endo);
  const Contour epi = closed_spline(shape.epi);
  return {signed_distance(endo, grid), signed_distance(epi, grid)};
}

struct RegionMasks {
  BinaryMask cavity;
  BinaryMask myocardium;
};

// cavity = endo mask; myocardium = epi AND NOT endo.
inline RegionMasks class_masks(const BinaryMask& endo_mask, const BinaryMask& epi_mask) {
  if (endo_mask.grid.height != epi_mask.grid.height ||
      endo_mask.grid.width != epi_mask.grid.width)
    throw std::invalid_argument("class_masks: grid mismatch");
  RegionMasks out;
  out.cavity = endo_mask;
  out.myocardium.grid = epi_mask.grid;
  out.myocardium.values.resize(epi_mask.values.size());
  for (std::size_t i = 0; i < epi_mask.values.size(); ++i)
    out.myocardium.values[i] = (epi_mask.values[i] && !endo_mask.values[i]) ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Zero-level contour extraction (marching squares with linear interpolation).
// Returns closed loops in mm; open chains that exit the grid are discarded.

inline std::vector<std::vector<Point2>> extract_zero_loops(const DistanceMap& d) {
  const int h = d.grid.height, w = d.grid.width;
  const double ps = d.grid.pixel_size;
  // Edge ids: horizontal edge (i,j)-(i,j+1) -> 2*(i*w+j); vertical edge
  // (i,j)-(i+1,j) -> 2*(i*w+j)+1.
  auto hedge = [&](int i, int j) { return 2 * (i * w + j); };
  auto vedge = [&](int i, int j) { return 2 * (i * w + j) + 1; };
  std::map<int, Point2> edge_point;
  std::map<int, std::vector<int>> adj;

  auto crossing = [&](int i0, int j0, int i1, int j1) -> Point2 {
    const double a = d.at(i0, j0), b = d.at(i1, j1);
    double f = a / (a - b);
    f = std::clamp(f, 0.0, 1.0);
    return {(j0 + 0.5 + f * (j1 - j0)) * ps, (i0 + 0.5 + f * (i1 - i0)) * ps};
  };

  auto add_segment = [&](int e0, int e1) {
    adj[e0].push_back(e1);
    adj[e1].push_back(e0);
  };

  for (int i = 0; i + 1 < h; ++i) {
    for (int j = 0; j + 1 < w; ++j) {
      const bool c0 = d.at(i, j) < 0.0f;       // top-left
      const bool c1 = d.at(i, j + 1) < 0.0f;   // top-right
      const bool c2 = d.at(i + 1, j + 1) < 0.0f;  // bottom-right
      const bool c3 = d.at(i + 1, j) < 0.0f;   // bottom-left
      const int idx = (c0 ? 1 : 0) | (c1 ? 2 : 0) | (c2 ? 4 : 0) | (c3 ? 8 : 0);
      if (idx == 0 || idx == 15) continue;

      const int top = hedge(i, j);
      const int bottom = hedge(i + 1, j);
      const int left = vedge(i, j);
      const int right = vedge(i, j + 1);
      if (c0 != c1) edge_point[top] = crossing(i, j, i, j + 1);
      if (c3 != c2) edge_point[bottom] = crossing(i + 1, j, i + 1, j + 1);
      if (c0 != c3) edge_point[left] = crossing(i, j, i + 1, j);
      if (c1 != c2) edge_point[right] = crossing(i, j + 1, i + 1, j + 1);

      switch (idx) {
        case 1: case 14: add_segment(top, left); break;
        case 2: case 13: add_segment(top, right); break;
        case 4: case 11: add_segment(right, bottom); break;
        case 8: case 7: add_segment(left, bottom); break;
        case 3: case 12: add_segment(left, right); break;
        case 6: case 9: add_segment(top, bottom); break;
        case 5: case 10: {
          // Saddle: split by the cell-center sign.
          const double center =
              0.25 * (d.at(i, j) + d.at(i, j + 1) + d.at(i + 1, j) + d.at(i + 1, j + 1));
          const bool center_in = center < 0.0;
          if ((idx == 5) == center_in) {
            add_segment(top, right);
            add_segment(left, bottom);
          } else {
            add_segment(top, left);
            add_segment(right, bottom);
          }
          break;
        }
        default: break;
      }
    }
  }

  std::vector<std::vector<Point2>> loops;
  std::map<int, bool> used;
  for (const auto& [start, nbrs] : adj) {
    if (used[start] || nbrs.size() != 2) continue;
    // Walk the chain from `start`; closed loops return to the start.
    std::vector<int> chain{start};
    used[start] = true;
    int prev = start;
    int cur = nbrs[0];
    bool closed = false;
    while (true) {
      if (cur == start) {
        closed = true;
        break;
      }
      const auto it = adj.find(cur);
      if (it == adj.end() || it->second.size() != 2) break;  // open chain
      used[cur] = true;
      chain.push_back(cur);
      const int next = (it->second[0] == prev) ? it->second[1] : it->second[0];
      prev = cur;
      cur = next;
    }
    if (!closed || chain.size() < 3) continue;
    std::vector<Point2> loop;
    loop.reserve(chain.size());
    for (int e : chain) loop.push_back(edge_point[e]);
    loops.push_back(std::move(loop));
  }
  return loops;
}

}  // namespace shapeseg
