#pragma once

// Segmentation overlap and boundary metrics, pose errors, clinical measures
// from landmarks and from distance maps, aggregation statistics and the
// Wilcoxon signed-rank test.

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <vector>

#include "shapeseg/distance_field.hpp"
#include "shapeseg/geometry.hpp"
#include "shapeseg/shape_model.hpp"

namespace shapeseg {

struct SegMetrics {
  double dsc_lv = 0.0;
  double dsc_myo = 0.0;
  double mbe = 0.0;  // mm
  double hd = 0.0;   // mm
};

struct PoseErrors {
  double dd = 0.0;      // mm
  double dtheta = 0.0;  // rad, in [0, pi]
};

struct ClinicalMeasures {
  double area_lv = 0.0;           // mm^2
  double area_myo = 0.0;          // mm^2
  std::array<double, 3> dims{};   // mm
  std::array<double, 6> rwt{};    // mm
};

// Dice coefficient on binary masks; two empty masks agree perfectly.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.grid.height != b.grid.height || a.grid.width != b.grid.width)
    throw std::invalid_argument("dice: grid mismatch");
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    na += a.values[i];
    nb += b.values[i];
    inter += (a.values[i] & b.values[i]);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Symmetric mean boundary distance over dense samples, in the contour units.
inline double boundary_error(const Contour& ca, const Contour& cb) {
  if (ca.dense.size() < 3 || cb.dense.size() < 3)
    throw std::invalid_argument("boundary_error: degenerate contour");
  const SegmentGrid ga(ca.dense);
  const SegmentGrid gb(cb.dense);
  double mean_ab = 0.0;
  for (const Point2& p : ca.dense) mean_ab += gb.min_distance(p);
  mean_ab /= static_cast<double>(ca.dense.size());
  double mean_ba = 0.0;
  for (const Point2& p : cb.dense) mean_ba += ga.min_distance(p);
  mean_ba /= static_cast<double>(cb.dense.size());
  return 0.5 * (mean_ab + mean_ba);
}

// Exact symmetric Hausdorff distance over dense samples.
inline double hausdorff(const Contour& ca, const Contour& cb) {
  if (ca.dense.size() < 3 || cb.dense.size() < 3)
    throw std::invalid_argument("hausdorff: degenerate contour");
  const SegmentGrid ga(ca.dense);
  const SegmentGrid gb(cb.dense);
  double dir_ab = 0.0;
  for (const Point2& p : ca.dense) dir_ab = std::max(dir_ab, gb.min_distance(p));
  double dir_ba = 0.0;
  for (const Point2& p : cb.dense) dir_ba = std::max(dir_ba, ga.min_distance(p));
  return std::max(dir_ab, dir_ba);
}

inline PoseErrors pose_errors(const PoseParams& truth, const PoseParams& pred) {
  PoseErrors e;
  e.dd = std::hypot(truth.cx - pred.cx, truth.cy - pred.cy);
  e.dtheta = std::abs(wrap_angle(truth.theta - pred.theta));
  return e;
}

// LV area from the endo spline, myocardial area as the ring difference,
// three LV dimensions from diametrically opposed endo landmark pairs, and
// six regional wall thicknesses from radial endo-epi distances. Landmark
// index 0 anchors segment 0 (the theta/septum ray).
inline ClinicalMeasures measures_from_landmarks(const LandmarkShape& shape) {
  const int n = shape.n();
  if (n % 6 != 0) throw std::invalid_argument("measures_from_landmarks: N must divide by 6");
  ClinicalMeasures m;
  const Contour endo = closed_spline(shape.endo);
  const Contour epi = closed_spline(shape.epi);
  m.area_lv = polygon_area(endo);
  m.area_myo = polygon_area(epi) - m.area_lv;

  const int half = n / 2;
  const int per_dim_group = half / 3;
  for (int g = 0; g < 3; ++g) {
    double acc = 0.0;
    for (int j = 0; j < per_dim_group; ++j) {
      const int k = g * per_dim_group + j;
      acc += distance(shape.endo[k], shape.endo[k + half]);
    }
    m.dims[g] = acc / per_dim_group;
  }

  const int per_seg = n / 6;
  for (int s = 0; s < 6; ++s) {
    double acc = 0.0;
    for (int j = 0; j < per_seg; ++j) {
      const int k = s * per_seg + j;
      acc += distance(shape.epi[k], shape.endo[k]);
    }
    m.rwt[s] = acc / per_seg;
  }
  return m;
}

namespace detail {

// Marching-squares loop with the largest enclosed area, as a Contour.
inline Contour dominant_zero_contour(const DistanceMap& d) {
  const auto loops = extract_zero_loops(d);
  if (loops.empty()) throw RuntimeError("no zero-level contour found (empty mask?)");
  std::size_t best = 0;
  double best_area = -1.0;
  for (std::size_t i = 0; i < loops.size(); ++i) {
    if (loops[i].size() < 4) continue;
    const double a = polygon_area(std::span<const Point2>(loops[i]));
    if (a > best_area) {
      best_area = a;
      best = i;
    }
  }
  if (best_area <= 0.0) throw RuntimeError("no usable zero-level contour");
  // Drop near-duplicate consecutive vertices before spline fitting.
  std::vector<Point2> pts;
  pts.reserve(loops[best].size());
  for (const Point2& p : loops[best]) {
    if (pts.empty() || distance(pts.back(), p) > 1e-9) pts.push_back(p);
  }
  while (pts.size() > 1 && distance(pts.front(), pts.back()) <= 1e-9) pts.pop_back();
  if (pts.size() < 4) throw RuntimeError("zero-level contour too short");
  return closed_spline(pts);
}

}  // namespace detail

// The map route: areas from pixel counts, dimensions and thicknesses from
// zero-level contours radially resampled at the given center and theta.
inline ClinicalMeasures measures_from_maps(const ClassMaps& maps, const Point2& center,
                                           double theta, int n_landmarks = 18) {
  const RegionMasks masks = class_masks(hard_binarize(maps.endo), hard_binarize(maps.epi));
  if (masks.cavity.count() == 0) throw RuntimeError("measures_from_maps: empty cavity mask");
  if (hard_binarize(maps.epi).count() == 0)
    throw RuntimeError("measures_from_maps: empty epi mask");

  const Contour endo = detail::dominant_zero_contour(maps.endo);
  const Contour epi = detail::dominant_zero_contour(maps.epi);
  if (!point_in_contour(center, epi))
    throw RuntimeError("measures_from_maps: center outside epi region");

  LandmarkShape shape;
  shape.endo = radial_resample(endo, center, theta, n_landmarks);
  shape.epi = radial_resample(epi, center, theta, n_landmarks);
  ClinicalMeasures m = measures_from_landmarks(shape);

  const double px_area = maps.endo.grid.pixel_size * maps.endo.grid.pixel_size;
  m.area_lv = static_cast<double>(masks.cavity.count()) * px_area;
  m.area_myo = static_cast<double>(masks.myocardium.count()) * px_area;
  return m;
}

// Mean Euclidean landmark distance between a reconstruction from the first
// M coefficients (ground-truth pose applied) and the ground-truth landmarks,
// for M = 1..m_max, averaged over all samples and landmarks.
inline std::vector<double> reconstruction_curve(const StatShapeModel& model,
                                                const std::vector<LandmarkShape>& gt_shapes,
                                                const std::vector<PoseParams>& gt_poses,
                                                const std::vector<ShapeCoefficients>& coeffs,
                                                int m_max) {
  if (gt_shapes.size() != gt_poses.size() || gt_shapes.size() != coeffs.size())
    throw std::invalid_argument("reconstruction_curve: input length mismatch");
  std::vector<double> curve(m_max, 0.0);
  for (int m = 1; m <= m_max; ++m) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < gt_shapes.size(); ++i) {
      const int m_use = std::min<int>(m, static_cast<int>(coeffs[i].size()));
      const ShapeVector rec = reconstruct(coeffs[i].head(m_use), model, m_use);
      const LandmarkShape placed = apply_pose(rec, gt_poses[i]);
      for (int k = 0; k < placed.n(); ++k) {
        acc += distance(placed.endo[k], gt_shapes[i].endo[k]);
        acc += distance(placed.epi[k], gt_shapes[i].epi[k]);
        count += 2;
      }
    }
    curve[m - 1] = acc / static_cast<double>(count);
  }
  return curve;
}

struct AggregateStats {
  double mae = 0.0;
  double rho = 0.0;
};

inline AggregateStats aggregate(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size() || truth.size() < 2)
    throw std::invalid_argument("aggregate: need paired samples, length >= 2");
  const double n = static_cast<double>(truth.size());
  double mae = 0.0, mt = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mae += std::abs(truth[i] - pred[i]);
    mt += truth[i];
    mp += pred[i];
  }
  mae /= n;
  mt /= n;
  mp /= n;
  double ctp = 0.0, vt = 0.0, vp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ctp += (truth[i] - mt) * (pred[i] - mp);
    vt += (truth[i] - mt) * (truth[i] - mt);
    vp += (pred[i] - mp) * (pred[i] - mp);
  }
  if (vt <= 0.0 || vp <= 0.0)
    throw std::invalid_argument("aggregate: zero variance, correlation undefined");
  return {mae, ctp / std::sqrt(vt * vp)};
}

// Two-sided Wilcoxon signed-rank test, normal approximation with tie
// correction and average ranks; zero differences are dropped.
inline double wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  const std::size_t n = diff.size();
  if (n < 10) throw std::invalid_argument("wilcoxon: fewer than 10 nonzero differences");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(diff[x]) < std::abs(diff[y]); });

  std::vector<double> rank(n, 0.0);
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diff[idx[j + 1]]) == std::abs(diff[idx[i]])) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    const double t = static_cast<double>(j - i + 1);
    if (t > 1.0) tie_term += t * t * t - t;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg_rank;
    i = j + 1;
  }

  double w_plus = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (diff[k] > 0.0) w_plus += rank[k];
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) throw std::invalid_argument("wilcoxon: zero variance (all ties)");
  const double z = (w_plus - mean) / std::sqrt(var);
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

// 4-connected component count of the foreground.
inline int count_components(const BinaryMask& mask) {
  const int h = mask.grid.height, w = mask.grid.width;
  std::vector<std::uint8_t> seen(mask.values.size(), 0);
  int components = 0;
  std::deque<int> queue;
  for (int start = 0; start < h * w; ++start) {
    if (!mask.values[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)])
      continue;
    ++components;
    seen[static_cast<std::size_t>(start)] = 1;
    queue.push_back(start);
    while (!queue.empty()) {
      const int cur = queue.front();
      queue.pop_front();
      const int ci = cur / w, cj = cur % w;
      const int nbrs[4][2] = {{ci - 1, cj}, {ci + 1, cj}, {ci, cj - 1}, {ci, cj + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[0] >= h || nb[1] < 0 || nb[1] >= w) continue;
        const int id = nb[0] * w + nb[1];
        if (mask.values[static_cast<std::size_t>(id)] && !seen[static_cast<std::size_t>(id)]) {
          seen[static_cast<std::size_t>(id)] = 1;
          queue.push_back(id);
        }
      }
    }
  }
  return components;
}

}  // namespace shapeseg
