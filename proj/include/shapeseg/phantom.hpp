#pragma once

// Synthetic short-axis cardiac phantoms: star-shaped endo/epi contour pairs
// from smooth radius functions, piecewise-constant intensity rendering with
// anti-aliased boundaries and texture noise, analytic ground-truth measures,
// and patient-grouped fold assignment.

#include <cmath>
#include <vector>

#include "shapeseg/augmentation.hpp"
#include "shapeseg/evaluation.hpp"
#include "shapeseg/rng.hpp"
#include "shapeseg/shape_model.hpp"

namespace shapeseg {

struct PhantomSpec {
  int n_landmarks = 18;
  int slices_per_patient = 4;
  Interval endo_radius{14.0, 24.0};   // mm, per-patient base
  Interval wall{6.0, 11.0};           // mm, per-patient base thickness
  double wall_var_max = 1.5;          // mm, per-segment thickness modulation
  double ecc_max = 0.12;              // cos(2phi) radius modulation
  double perturb_max = 0.03;          // relative cos(3phi)/cos(4phi) terms
  double intensity_cavity = 0.85;
  double intensity_myo = 0.45;
  double intensity_background = 0.15;
  Interval texture_noise{0.0, 0.03};  // per-sample sigma
  double center_jitter = 8.0;         // mm around the grid center
  Interval theta{-M_PI, M_PI};
  GridSpec grid{64, 64, 2.0};

  void validate() const {
    grid.validate();
    if (n_landmarks < 8 || n_landmarks % 6 != 0)
      throw ConfigError("PhantomSpec: n_landmarks must be >= 8 and divisible by 6");
    if (slices_per_patient < 1) throw ConfigError("PhantomSpec: slices_per_patient >= 1");
    if (!(endo_radius.lo > 0.0)) throw ConfigError("PhantomSpec: endo radius must be positive");
    if (!(wall.lo > 0.0)) throw ConfigError("PhantomSpec: wall thickness must be positive");
    for (double v : {intensity_cavity, intensity_myo, intensity_background}) {
      if (v < 0.0 || v > 1.0) throw ConfigError("PhantomSpec: intensities must be in [0,1]");
    }
    endo_radius.validate("endo_radius");
    wall.validate("wall");
    texture_noise.validate("texture_noise");
    theta.validate("theta");
  }
};

// Smooth positive radius functions for one slice; star-shaped by
// construction, so radial landmark sampling is exact.
struct RadiusModel {
  double r0 = 18.0;
  double ecc = 0.0, phi_ecc = 0.0;
  double a3 = 0.0, psi3 = 0.0;
  double a4 = 0.0, psi4 = 0.0;
  double w0 = 8.0;
  double w2 = 0.0, psi_w2 = 0.0;
  double w3 = 0.0, psi_w3 = 0.0;

  double endo(double phi) const {
    return r0 * (1.0 + ecc * std::cos(2.0 * (phi - phi_ecc)) + a3 * std::cos(3.0 * phi + psi3) +
                 a4 * std::cos(4.0 * phi + psi4));
  }
  double wall(double phi) const {
    return w0 + w2 * std::cos(2.0 * phi + psi_w2) + w3 * std::cos(3.0 * phi + psi_w3);
  }
  double epi(double phi) const { return endo(phi) + wall(phi); }
};

struct PhantomSample {
  int id = 0;
  int patient = 0;
  int fold = 0;
  std::vector<float> image;  // H*W in [0,1]
  LandmarkShape shape;
  PoseParams pose;
  ClinicalMeasures measures;  // analytic ground truth
};

struct PhantomDataset {
  PhantomSpec spec;
  int folds = 5;
  std::uint64_t seed = 0;
  std::vector<PhantomSample> samples;

  const GridSpec& grid() const { return spec.grid; }
};

namespace detail {

struct PatientBase {
  RadiusModel model;
  double theta = 0.0;
  Point2 center{0.0, 0.0};
};

inline PatientBase draw_patient(Rng& rng, const PhantomSpec& spec) {
  PatientBase p;
  p.model.r0 = rng.uniform(spec.endo_radius.lo, spec.endo_radius.hi);
  p.model.ecc = rng.uniform(0.0, spec.ecc_max);
  p.model.phi_ecc = rng.uniform(0.0, 2.0 * M_PI);
  p.model.a3 = rng.uniform(-spec.perturb_max, spec.perturb_max);
  p.model.psi3 = rng.uniform(0.0, 2.0 * M_PI);
  p.model.a4 = rng.uniform(-spec.perturb_max, spec.perturb_max);
  p.model.psi4 = rng.uniform(0.0, 2.0 * M_PI);
  p.model.w0 = rng.uniform(spec.wall.lo, spec.wall.hi);
  p.model.w2 = rng.uniform(0.0, spec.wall_var_max);
  p.model.psi_w2 = rng.uniform(0.0, 2.0 * M_PI);
  p.model.w3 = rng.uniform(0.0, 0.5 * spec.wall_var_max);
  p.model.psi_w3 = rng.uniform(0.0, 2.0 * M_PI);
  p.theta = rng.uniform(spec.theta.lo, spec.theta.hi);
  const Point2 gc = spec.grid.center_mm();
  p.center = {gc.x + rng.uniform(-spec.center_jitter, spec.center_jitter),
              gc.y + rng.uniform(-spec.center_jitter, spec.center_jitter)};
  return p;
}

inline PatientBase jitter_slice(Rng& rng, const PatientBase& base, const PhantomSpec& spec) {
  PatientBase s = base;
  s.model.r0 *= 1.0 + rng.uniform(-0.05, 0.05);
  s.model.w0 *= 1.0 + rng.uniform(-0.05, 0.05);
  s.model.ecc = std::max(0.0, s.model.ecc + rng.uniform(-0.02, 0.02));
  s.theta = wrap_angle(s.theta + rng.uniform(-0.1, 0.1));
  s.center += {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
  (void)spec;
  return s;
}

inline bool model_valid(const PatientBase& p, const PhantomSpec& spec) {
  double max_epi = 0.0;
  for (int i = 0; i < 720; ++i) {
    const double phi = 2.0 * M_PI * i / 720.0;
    const double re = p.model.endo(phi);
    const double w = p.model.wall(phi);
    if (re < 3.0 || w < 1.2) return false;
    max_epi = std::max(max_epi, re + w);
  }
  const double margin = 2.0;
  return p.center.x - max_epi >= margin && p.center.y - max_epi >= margin &&
         p.center.x + max_epi <= spec.grid.extent_x_mm() - margin &&
         p.center.y + max_epi <= spec.grid.extent_y_mm() - margin;
}

}  // namespace detail

// Landmarks radially sampled at theta + 2*pi*k/N on the exact radius
// functions, so stored landmarks and analytic measures share one source.
inline LandmarkShape landmarks_of(const RadiusModel& model, const PoseParams& pose,
                                  int n_landmarks) {
  LandmarkShape s;
  s.endo.resize(n_landmarks);
  s.epi.resize(n_landmarks);
  for (int k = 0; k < n_landmarks; ++k) {
    const double phi = pose.theta + 2.0 * M_PI * k / n_landmarks;
    const Point2 dir{std::cos(phi), std::sin(phi)};
    s.endo[k] = pose.center() + dir * model.endo(phi);
    s.epi[k] = pose.center() + dir * model.epi(phi);
  }
  return s;
}

// Areas by high-resolution quadrature of the radius functions; dims and RWT
// exactly as the landmark definitions prescribe.
inline ClinicalMeasures analytic_measures(const RadiusModel& model, const PoseParams& pose,
                                          int n_landmarks) {
  ClinicalMeasures m;
  const int quad = 4096;
  double a_endo = 0.0, a_epi = 0.0;
  for (int i = 0; i < quad; ++i) {
    const double phi = 2.0 * M_PI * (i + 0.5) / quad;
    const double re = model.endo(phi);
    const double rp = model.epi(phi);
    a_endo += re * re;
    a_epi += rp * rp;
  }
  m.area_lv = 0.5 * a_endo * (2.0 * M_PI / quad);
  m.area_myo = 0.5 * (a_epi - a_endo) * (2.0 * M_PI / quad);

  const int half = n_landmarks / 2;
  const int per_dim_group = half / 3;
  auto phi_of = [&](int k) { return pose.theta + 2.0 * M_PI * k / n_landmarks; };
  for (int g = 0; g < 3; ++g) {
    double acc = 0.0;
    for (int j = 0; j < per_dim_group; ++j) {
      const int k = g * per_dim_group + j;
      acc += model.endo(phi_of(k)) + model.endo(phi_of(k + half));
    }
    m.dims[g] = acc / per_dim_group;
  }
  const int per_seg = n_landmarks / 6;
  for (int s = 0; s < 6; ++s) {
    double acc = 0.0;
    for (int j = 0; j < per_seg; ++j) acc += model.wall(phi_of(s * per_seg + j));
    m.rwt[s] = acc / per_seg;
  }
  return m;
}

// Draw one slice model; resample internally on invalid geometry.
inline detail::PatientBase draw_valid_slice(Rng& rng, const detail::PatientBase& base,
                                            const PhantomSpec& spec) {
  for (int attempt = 0; attempt < 20; ++attempt) {
    const detail::PatientBase s = detail::jitter_slice(rng, base, spec);
    if (detail::model_valid(s, spec)) return s;
  }
  throw RuntimeError("phantom: could not draw a valid slice in 20 attempts");
}

inline std::pair<LandmarkShape, PoseParams> generate_shape(Rng& rng, const PhantomSpec& spec) {
  spec.validate();
  for (int attempt = 0; attempt < 20; ++attempt) {
    const detail::PatientBase p = detail::draw_patient(rng, spec);
    if (!detail::model_valid(p, spec)) continue;
    const PoseParams pose(p.theta, p.center.x, p.center.y);
    return {landmarks_of(p.model, pose, spec.n_landmarks), pose};
  }
  throw RuntimeError("phantom: could not draw a valid shape in 20 attempts");
}

// Piecewise-constant intensities by region membership with 4x4 supersampling
// of boundary pixels, then Gaussian texture noise, clamped to [0, 1].
inline std::vector<float> render_image(const RadiusModel& model, const PoseParams& pose,
                                       const PhantomSpec& spec, double noise_sigma, Rng& rng) {
  const GridSpec& grid = spec.grid;
  std::vector<float> img(static_cast<std::size_t>(grid.height) * grid.width);
  const Point2 c = pose.center();
  auto region_intensity = [&](const Point2& p) {
    const double r = distance(p, c);
    const double phi = std::atan2(p.y - c.y, p.x - c.x);
    const double re = model.endo(phi);
    if (r < re) return spec.intensity_cavity;
    if (r < re + model.wall(phi)) return spec.intensity_myo;
    return spec.intensity_background;
  };
  const double band = 1.2 * grid.pixel_size;
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const Point2 p = grid.pixel_center_mm(i, j);
      const double r = distance(p, c);
      const double phi = std::atan2(p.y - c.y, p.x - c.x);
      const double d_endo = std::abs(r - model.endo(phi));
      const double d_epi = std::abs(r - model.epi(phi));
      double v;
      if (std::min(d_endo, d_epi) < band) {
        double acc = 0.0;
        for (int si = 0; si < 4; ++si) {
          for (int sj = 0; sj < 4; ++sj) {
            const Point2 sub{p.x + (sj - 1.5) * grid.pixel_size / 4.0,
                             p.y + (si - 1.5) * grid.pixel_size / 4.0};
            acc += region_intensity(sub);
          }
        }
        v = acc / 16.0;
      } else {
        v = region_intensity(p);
      }
      img[static_cast<std::size_t>(i) * grid.width + j] = static_cast<float>(v);
    }
  }
  if (noise_sigma > 0.0) {
    for (auto& v : img)
      v = static_cast<float>(std::clamp(v + noise_sigma * rng.normal(), 0.0, 1.0));
  }
  return img;
}

// Patient-grouped dataset with deterministic per-sample RNG streams. All
// slices of one synthetic patient share a fold.
inline PhantomDataset generate_dataset(std::uint64_t seed, int count, const PhantomSpec& spec,
                                       int folds) {
  spec.validate();
  if (folds < 1 || count < folds) throw ConfigError("generate_dataset: need count >= folds >= 1");
  PhantomDataset ds;
  ds.spec = spec;
  ds.folds = folds;
  ds.seed = seed;
  ds.samples.resize(count);

  const int patients = (count + spec.slices_per_patient - 1) / spec.slices_per_patient;
  int id = 0;
  for (int pat = 0; pat < patients && id < count; ++pat) {
    Rng pat_rng = Rng::stream(seed, 0x70617400u + static_cast<std::uint64_t>(pat));
    detail::PatientBase base = detail::draw_patient(pat_rng, spec);
    for (int attempt = 0; attempt < 20 && !detail::model_valid(base, spec); ++attempt)
      base = detail::draw_patient(pat_rng, spec);
    if (!detail::model_valid(base, spec))
      throw RuntimeError("phantom: invalid patient base after 20 attempts");
    for (int sl = 0; sl < spec.slices_per_patient && id < count; ++sl, ++id) {
      Rng rng = Rng::stream(seed, 0x736c6300u + static_cast<std::uint64_t>(id));
      const detail::PatientBase s = draw_valid_slice(rng, base, spec);
      PhantomSample& out = ds.samples[static_cast<std::size_t>(id)];
      out.id = id;
      out.patient = pat;
      out.fold = pat % folds;
      out.pose = PoseParams(s.theta, s.center.x, s.center.y);
      out.shape = landmarks_of(s.model, out.pose, spec.n_landmarks);
      out.measures = analytic_measures(s.model, out.pose, spec.n_landmarks);
      const double sigma = rng.uniform(spec.texture_noise.lo, spec.texture_noise.hi);
      out.image = render_image(s.model, out.pose, spec, sigma, rng);
    }
  }
  return ds;
}

}  // namespace shapeseg
