#pragma once

// Online pose/shape augmentation: uniform parameter draws, shape-model
// coefficient perturbation, thin-plate-spline image warping and Gaussian
// intensity noise. Distance maps are never warped; they are regenerated from
// the augmented landmarks by the caller.

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "shapeseg/geometry.hpp"
#include "shapeseg/rng.hpp"
#include "shapeseg/shape_model.hpp"

namespace shapeseg {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  void validate(const char* name) const {
    if (!(lo <= hi)) throw ConfigError(std::string("AugmentRanges: ") + name + " lower > upper");
  }
};

struct AugmentRanges {
  Interval translation{-40.0, 40.0};  // mm, per axis
  Interval rotation{-M_PI, M_PI};     // rad
  Interval coefficient{-1.0, 1.0};    // added to b_m
  Interval noise_sigma{0.0, 0.1};     // intensity units

  void validate() const {
    translation.validate("translation");
    rotation.validate("rotation");
    coefficient.validate("coefficient");
    noise_sigma.validate("noise_sigma");
  }
};

struct AugmentSample {
  double dcx = 0.0;
  double dcy = 0.0;
  double dtheta = 0.0;
  std::vector<double> a;  // per-mode coefficient offsets
  double sigma = 0.0;
};

// Independent uniform draws; the draw order (dcx, dcy, dtheta, a_m..., sigma)
// is part of the determinism contract.
inline AugmentSample draw(Rng& rng, const AugmentRanges& ranges, int m_modes) {
  ranges.validate();
  AugmentSample s;
  s.dcx = rng.uniform(ranges.translation.lo, ranges.translation.hi);
  s.dcy = rng.uniform(ranges.translation.lo, ranges.translation.hi);
  s.dtheta = rng.uniform(ranges.rotation.lo, ranges.rotation.hi);
  s.a.resize(m_modes);
  for (int m = 0; m < m_modes; ++m) s.a[m] = rng.uniform(ranges.coefficient.lo, ranges.coefficient.hi);
  s.sigma = rng.uniform(ranges.noise_sigma.lo, ranges.noise_sigma.hi);
  return s;
}

// Perturb shape coefficients and pose. Modes above the augmented count keep
// their projected values, and the out-of-span residual is carried over, so a
// zero sample reproduces the input exactly.
inline std::pair<LandmarkShape, PoseParams> augment_shape(const LandmarkShape& shape,
                                                          const PoseParams& pose,
                                                          const StatShapeModel& model,
                                                          const AugmentSample& sample) {
  const ShapeVector s_norm = normalize_pose(shape, pose);
  const int rank = model.rank();
  ShapeCoefficients b = project(s_norm, model, rank);
  const ShapeVector residual = s_norm - reconstruct(b, model, rank);
  const int m_aug = std::min<int>(static_cast<int>(sample.a.size()), rank);
  for (int m = 0; m < m_aug; ++m) b[m] += sample.a[m];
  const ShapeVector s_aug = reconstruct(b, model, rank) + residual;
  const PoseParams pose_aug(pose.theta + sample.dtheta, pose.cx + sample.dcx,
                            pose.cy + sample.dcy);
  return {apply_pose(s_aug, pose_aug), pose_aug};
}

// Draw an augmentation whose shifted center stays inside the grid; up to 10
// redraws, then an error.
inline AugmentSample draw_valid(Rng& rng, const AugmentRanges& ranges, int m_modes,
                                const PoseParams& pose, const GridSpec& grid) {
  for (int attempt = 0; attempt < 10; ++attempt) {
    AugmentSample s = draw(rng, ranges, m_modes);
    if (grid.contains_mm({pose.cx + s.dcx, pose.cy + s.dcy})) return s;
  }
  throw RuntimeError("augmentation: center left the grid in 10 consecutive draws");
}

// ---------------------------------------------------------------------------
// Thin-plate spline, kernel U(r) = r^2 log r, zero regularization.

struct TpsTransform {
  std::vector<Point2> control;   // source control points
  Eigen::MatrixXd kernel_w;      // n x 2 kernel weights (x, y columns)
  Eigen::MatrixXd affine;        // 3 x 2 rows (1, x, y), columns (x, y)

  Point2 apply(const Point2& p) const {
    double ox = affine(0, 0) + affine(1, 0) * p.x + affine(2, 0) * p.y;
    double oy = affine(0, 1) + affine(1, 1) * p.x + affine(2, 1) * p.y;
    for (std::size_t i = 0; i < control.size(); ++i) {
      const double r2 = (p - control[i]).squared_norm();
      if (r2 <= 0.0) continue;  // U(0) = 0
      const double u = 0.5 * r2 * std::log(r2);
      ox += kernel_w(static_cast<Eigen::Index>(i), 0) * u;
      oy += kernel_w(static_cast<Eigen::Index>(i), 1) * u;
    }
    return {ox, oy};
  }
};

inline TpsTransform tps_fit(std::span<const Point2> source, std::span<const Point2> target) {
  const int n = static_cast<int>(source.size());
  if (n < 3 || target.size() != source.size())
    throw std::invalid_argument("tps_fit: need >= 3 paired control points");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (distance(source[i], source[j]) < 1e-9)
        throw std::invalid_argument("tps_fit: duplicate control points");

  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + 3, n + 3);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double r2 = (source[i] - source[j]).squared_norm();
      sys(i, j) = 0.5 * r2 * std::log(r2);
    }
    sys(i, n) = 1.0;
    sys(i, n + 1) = source[i].x;
    sys(i, n + 2) = source[i].y;
    sys(n, i) = 1.0;
    sys(n + 1, i) = source[i].x;
    sys(n + 2, i) = source[i].y;
    rhs(i, 0) = target[i].x;
    rhs(i, 1) = target[i].y;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sys);
  if (!lu.isInvertible())
    throw std::invalid_argument("tps_fit: singular system (collinear control points?)");
  const Eigen::MatrixXd sol = lu.solve(rhs);

  TpsTransform t;
  t.control.assign(source.begin(), source.end());
  t.kernel_w = sol.topRows(n);
  t.affine = sol.bottomRows(3);
  return t;
}

// Backward warp: each output pixel samples the input image at the TPS-mapped
// position with bilinear interpolation; samples outside the grid read 0.
// The transform must map output-space (augmented) mm coordinates to
// input-space (original) mm coordinates.
inline std::vector<float> warp_image(std::span<const float> image, const GridSpec& grid,
                                     const TpsTransform& tps) {
  const int h = grid.height, w = grid.width;
  if (image.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("warp_image: image size mismatch");
  std::vector<float> out(image.size(), 0.0f);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const Point2 q = tps.apply(grid.pixel_center_mm(i, j));
      const double col = q.x / grid.pixel_size - 0.5;
      const double row = q.y / grid.pixel_size - 0.5;
      const int c0 = static_cast<int>(std::floor(col));
      const int r0 = static_cast<int>(std::floor(row));
      const double fc = col - c0;
      const double fr = row - r0;
      auto sample = [&](int r, int c) -> double {
        if (r < 0 || r >= h || c < 0 || c >= w) return 0.0;
        return image[static_cast<std::size_t>(r) * w + c];
      };
      const double v = (1.0 - fr) * ((1.0 - fc) * sample(r0, c0) + fc * sample(r0, c0 + 1)) +
                       fr * ((1.0 - fc) * sample(r0 + 1, c0) + fc * sample(r0 + 1, c0 + 1));
      out[static_cast<std::size_t>(i) * w + j] = static_cast<float>(v);
    }
  }
  return out;
}

// I.i.d. zero-mean Gaussian intensity noise, no clipping.
inline void add_noise(std::span<float> image, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("add_noise: sigma must be >= 0");
  if (sigma == 0.0) return;
  for (float& v : image) v = static_cast<float>(v + sigma * rng.normal());
}

}  // namespace shapeseg
