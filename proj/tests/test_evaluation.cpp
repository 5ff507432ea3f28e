#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "shapeseg/evaluation.hpp"
#include "test_support.hpp"

using namespace shapeseg;
using testsup::circle_points;

namespace {

BinaryMask rect_mask(const GridSpec& grid, int i0, int j0, int hh, int ww) {
  BinaryMask m;
  m.grid = grid;
  m.values.assign(static_cast<std::size_t>(grid.height) * grid.width, 0);
  for (int i = i0; i < i0 + hh; ++i)
    for (int j = j0; j < j0 + ww; ++j)
      m.values[static_cast<std::size_t>(i) * grid.width + j] = 1;
  return m;
}

}  // namespace

TEST_CASE("dice basics") {
  GridSpec grid{32, 32, 1.0};
  const BinaryMask a = rect_mask(grid, 4, 4, 10, 10);
  CHECK(dice(a, a) == 1.0);
  const BinaryMask b = rect_mask(grid, 20, 20, 10, 10);
  CHECK(dice(a, b) == 0.0);
  // Two 10x10 squares overlapping in 50 px -> 2*50/200 = 0.5.
  const BinaryMask c = rect_mask(grid, 4, 9, 10, 10);
  CHECK(dice(a, c) == 0.5);
  // Both empty -> 1 by the agreement convention.
  const BinaryMask e = rect_mask(grid, 0, 0, 0, 0);
  CHECK(dice(e, e) == 1.0);
  BinaryMask other;
  other.grid = GridSpec{16, 16, 1.0};
  other.values.assign(256, 0);
  CHECK_THROWS_AS(dice(a, other), std::invalid_argument);
  CHECK(dice(a, c) == dice(c, a));
}

TEST_CASE("boundary_error on circles and against brute force") {
  const Contour c10 = closed_spline(circle_points({0, 0}, 10.0, 36));
  const Contour c12 = closed_spline(circle_points({0, 0}, 12.0, 36));
  CHECK(boundary_error(c10, c10) < 1e-3);
  CHECK(boundary_error(c10, c12) == Catch::Approx(2.0).margin(0.05));
  CHECK(boundary_error(c10, c12) == boundary_error(c12, c10));

  Rng rng(3);
  const Contour a = closed_spline(testsup::random_star(rng, {0, 0}, 12.0));
  const Contour b = closed_spline(testsup::random_star(rng, {2, 1}, 14.0));
  // Brute force: directed means over 1e5 points sampled on each spline.
  const int big = 100000;
  std::vector<Point2> pa(big), pb(big);
  for (int i = 0; i < big; ++i) {
    pa[i] = a.spline.eval(a.spline.period() * i / big);
    pb[i] = b.spline.eval(b.spline.period() * i / big);
  }
  const SegmentGrid gb(b.dense);
  const SegmentGrid ga(a.dense);
  double mean_ab = 0.0;
  for (const Point2& p : a.dense) mean_ab += gb.min_distance(p);
  mean_ab /= a.dense.size();
  double brute_ab = 0.0;
  for (const Point2& p : a.dense) {
    double best = 1e300;
    for (const Point2& q : pb) best = std::min(best, distance(p, q));
    brute_ab += best;
  }
  brute_ab /= a.dense.size();
  CHECK(std::abs(mean_ab - brute_ab) < 1e-2);
}

TEST_CASE("hausdorff on circles and a translated copy") {
  const Contour c10 = closed_spline(circle_points({0, 0}, 10.0, 36));
  const Contour c12 = closed_spline(circle_points({0, 0}, 12.0, 36));
  CHECK(hausdorff(c10, c10) < 1e-3);
  CHECK(hausdorff(c10, c12) == Catch::Approx(2.0).margin(0.05));

  // Circle translated by (3, 4): for equal radii r and offset d < r the
  // point-to-circle distance ||p-c| - r| peaks at exactly d. Verified below
  // against a dense brute-force maximum as well.
  const Contour moved = closed_spline(circle_points({3, 4}, 10.0, 36));
  const double hd = hausdorff(c10, moved);
  CHECK(hd == Catch::Approx(5.0).margin(0.05));

  double brute = 0.0;
  for (const Point2& p : c10.dense) brute = std::max(brute, min_distance(p, moved));
  for (const Point2& p : moved.dense) brute = std::max(brute, min_distance(p, c10));
  CHECK(hd == Catch::Approx(brute).margin(1e-9));
}

TEST_CASE("hausdorff dominates boundary_error") {
  Rng rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Contour a = closed_spline(testsup::random_star(rng, {0, 0}, 12.0));
    const Contour b = closed_spline(testsup::random_star(rng, {1, -1}, 13.0));
    CHECK(hausdorff(a, b) >= boundary_error(a, b));
  }
}

TEST_CASE("pose_errors handles wrap-around") {
  CHECK(pose_errors(PoseParams(0.3, 1, 2), PoseParams(0.3, 1, 2)).dd == 0.0);
  CHECK(pose_errors(PoseParams(0, 0, 0), PoseParams(0, 3, 4)).dd == Catch::Approx(5.0));
  const PoseErrors e = pose_errors(PoseParams(-0.9 * M_PI, 0, 0), PoseParams(0.9 * M_PI, 0, 0));
  CHECK(e.dtheta == Catch::Approx(0.2 * M_PI).margin(1e-12));
}

TEST_CASE("measures_from_landmarks on concentric circles") {
  LandmarkShape s;
  s.endo = circle_points({0, 0}, 20.0, 18);
  s.epi = circle_points({0, 0}, 30.0, 18);
  const ClinicalMeasures m = measures_from_landmarks(s);
  CHECK(m.area_lv == Catch::Approx(M_PI * 400.0).epsilon(0.005));
  CHECK(m.area_myo == Catch::Approx(M_PI * 500.0).epsilon(0.005));
  for (double d : m.dims) CHECK(d == Catch::Approx(40.0).margin(1e-9));
  for (double t : m.rwt) CHECK(t == Catch::Approx(10.0).margin(1e-9));

  LandmarkShape bad;
  bad.endo = circle_points({0, 0}, 10.0, 16);
  bad.epi = circle_points({0, 0}, 15.0, 16);
  CHECK_THROWS_AS(measures_from_landmarks(bad), std::invalid_argument);
}

TEST_CASE("measures_from_landmarks ellipse dims match the closed form") {
  // Radial samples of an axis-aligned ellipse a=30, b=20 at theta=0.
  auto radius = [](double phi) {
    const double a = 30.0, b = 20.0;
    return a * b / std::sqrt(b * b * std::cos(phi) * std::cos(phi) +
                             a * a * std::sin(phi) * std::sin(phi));
  };
  LandmarkShape s;
  s.endo.resize(18);
  s.epi.resize(18);
  for (int k = 0; k < 18; ++k) {
    const double phi = 2.0 * M_PI * k / 18;
    const double re = radius(phi);
    s.endo[k] = {re * std::cos(phi), re * std::sin(phi)};
    s.epi[k] = {(re + 8.0) * std::cos(phi), (re + 8.0) * std::sin(phi)};
  }
  const ClinicalMeasures m = measures_from_landmarks(s);
  for (int g = 0; g < 3; ++g) {
    double expect = 0.0;
    for (int j = 0; j < 3; ++j) {
      const int k = g * 3 + j;
      expect += radius(2.0 * M_PI * k / 18) + radius(2.0 * M_PI * (k + 9) / 18);
    }
    expect /= 3.0;
    CHECK(m.dims[g] == Catch::Approx(expect).margin(1e-9));
  }
}

TEST_CASE("measures scale linearly and quadratically") {
  Rng rng(9);
  const LandmarkShape s = testsup::random_landmark_shape(rng, {0, 0});
  LandmarkShape scaled;
  scaled.endo = s.endo;
  scaled.epi = s.epi;
  for (auto& p : scaled.endo) p = p * 2.0;
  for (auto& p : scaled.epi) p = p * 2.0;
  const ClinicalMeasures m1 = measures_from_landmarks(s);
  const ClinicalMeasures m2 = measures_from_landmarks(scaled);
  CHECK(m2.area_lv == Catch::Approx(4.0 * m1.area_lv).epsilon(1e-3));
  CHECK(m2.area_myo == Catch::Approx(4.0 * m1.area_myo).epsilon(1e-3));
  for (int g = 0; g < 3; ++g) CHECK(m2.dims[g] == Catch::Approx(2.0 * m1.dims[g]).epsilon(1e-9));
  for (int t = 0; t < 6; ++t) CHECK(m2.rwt[t] == Catch::Approx(2.0 * m1.rwt[t]).epsilon(1e-9));
}

TEST_CASE("measures_from_maps agrees with the landmark route") {
  GridSpec grid{64, 64, 2.0};
  LandmarkShape s;
  const Point2 c{64.0, 64.0};
  s.endo = circle_points(c, 20.0, 18);
  s.epi = circle_points(c, 30.0, 18);
  const ClassMaps maps = maps_from_landmarks(s, grid);
  const ClinicalMeasures from_maps = measures_from_maps(maps, c, 0.0, 18);
  const ClinicalMeasures from_lm = measures_from_landmarks(s);
  CHECK(from_maps.area_lv == Catch::Approx(from_lm.area_lv).epsilon(0.02));
  CHECK(from_maps.area_myo == Catch::Approx(from_lm.area_myo).epsilon(0.02));
  for (int g = 0; g < 3; ++g)
    CHECK(from_maps.dims[g] == Catch::Approx(from_lm.dims[g]).epsilon(0.02));
  for (int t = 0; t < 6; ++t)
    CHECK(from_maps.rwt[t] == Catch::Approx(from_lm.rwt[t]).epsilon(0.02));

  // Pixel-count area for a circle of radius 10 px at 2 mm/px.
  CHECK(from_maps.area_lv ==
        Catch::Approx(M_PI * 20.0 * 20.0).margin(2.0 * M_PI * 10.0 * 4.0));

  DistanceMap pos;
  pos.grid = grid;
  pos.values.assign(static_cast<std::size_t>(64) * 64, 5.0f);
  ClassMaps empty{pos, pos};
  CHECK_THROWS_AS(measures_from_maps(empty, c, 0.0, 18), RuntimeError);
}

TEST_CASE("reconstruction_curve: monotone gt curve, predicted above gt") {
  Rng rng(11);
  std::vector<LandmarkShape> shapes;
  std::vector<PoseParams> poses;
  std::vector<ShapeVector> norm;
  for (int i = 0; i < 20; ++i) {
    const auto s = testsup::random_landmark_shape(rng, {0, 0});
    const PoseParams pose(rng.uniform(-M_PI, M_PI), rng.uniform(40, 90), rng.uniform(40, 90));
    shapes.push_back(apply_pose(to_shape_vector(s), pose));
    poses.push_back(pose);
    norm.push_back(normalize_pose(shapes.back(), pose));
  }
  const StatShapeModel model = fit(norm);
  const int m_max = std::min(12, model.rank());

  std::vector<ShapeCoefficients> gt_coeffs, noisy_coeffs;
  for (const auto& v : norm) {
    const ShapeCoefficients b = project(v, model, m_max);
    gt_coeffs.push_back(b);
    ShapeCoefficients noisy = b;
    for (Eigen::Index k = 0; k < noisy.size(); ++k) noisy[k] += rng.normal(0.0, 0.35);
    noisy_coeffs.push_back(noisy);
  }
  const auto gt_curve = reconstruction_curve(model, shapes, poses, gt_coeffs, m_max);
  const auto pred_curve = reconstruction_curve(model, shapes, poses, noisy_coeffs, m_max);
  for (std::size_t m = 1; m < gt_curve.size(); ++m) CHECK(gt_curve[m] <= gt_curve[m - 1] + 1e-12);
  for (std::size_t m = 0; m < gt_curve.size(); ++m) CHECK(pred_curve[m] >= gt_curve[m]);

  // Full-rank gt reconstruction is exact.
  std::vector<ShapeCoefficients> full;
  for (const auto& v : norm) full.push_back(project(v, model, model.rank()));
  const auto full_curve = reconstruction_curve(model, shapes, poses, full, model.rank());
  CHECK(full_curve.back() < 1e-6);
}

TEST_CASE("aggregate MAE and correlation") {
  std::vector<double> t{1, 2, 3, 4, 5, 6};
  CHECK(aggregate(t, t).mae == 0.0);
  CHECK(aggregate(t, t).rho == Catch::Approx(1.0));
  std::vector<double> shifted;
  for (double v : t) shifted.push_back(v + 5.0);
  CHECK(aggregate(t, shifted).mae == Catch::Approx(5.0));
  CHECK(aggregate(t, shifted).rho == Catch::Approx(1.0));

  Rng rng(13);
  std::vector<double> a(50), b(50);
  for (int i = 0; i < 50; ++i) {
    a[i] = rng.uniform(-10, 10);
    b[i] = rng.uniform(-10, 10);
  }
  const AggregateStats st = aggregate(a, b);
  // Independent direct-formula oracle.
  double ma = 0, mb = 0;
  for (int i = 0; i < 50; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= 50;
  mb /= 50;
  double cov = 0, va = 0, vb = 0, mae = 0;
  for (int i = 0; i < 50; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    mae += std::abs(a[i] - b[i]);
  }
  CHECK(std::abs(st.rho - cov / std::sqrt(va * vb)) < 1e-12);
  CHECK(std::abs(st.mae - mae / 50) < 1e-12);

  std::vector<double> flat(10, 1.0);
  CHECK_THROWS_AS(aggregate(flat, t), std::invalid_argument);
}

TEST_CASE("wilcoxon signed-rank test") {
  Rng rng(17);
  std::vector<double> a(30), b(30);
  for (int i = 0; i < 30; ++i) {
    a[i] = rng.uniform(0, 1);
    b[i] = a[i] + 3.0;  // large constant shift
  }
  CHECK(wilcoxon_signed_rank(a, b) < 0.001);
  CHECK(wilcoxon_signed_rank(a, b) == wilcoxon_signed_rank(b, a));

  CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), std::invalid_argument);  // all zero diffs
  std::vector<double> tiny(5, 0.0), tiny2(5, 1.0);
  CHECK_THROWS_AS(wilcoxon_signed_rank(tiny, tiny2), std::invalid_argument);

  // Balanced noise should not be significant.
  std::vector<double> c(40), d(40);
  for (int i = 0; i < 40; ++i) {
    c[i] = rng.uniform(0, 1);
    d[i] = c[i] + rng.uniform(-0.5, 0.5);
  }
  CHECK(wilcoxon_signed_rank(c, d) > 0.01);
}

TEST_CASE("count_components on masks") {
  GridSpec grid{64, 64, 2.0};
  LandmarkShape s;
  const Point2 c{64.0, 64.0};
  s.endo = circle_points(c, 20.0, 18);
  s.epi = circle_points(c, 30.0, 18);
  const ClassMaps maps = maps_from_landmarks(s, grid);
  const RegionMasks rm = class_masks(hard_binarize(maps.endo), hard_binarize(maps.epi));
  CHECK(count_components(rm.cavity) == 1);
  CHECK(count_components(rm.myocardium) == 1);  // an annulus is connected

  BinaryMask two = rect_mask(grid, 2, 2, 5, 5);
  const BinaryMask other = rect_mask(grid, 20, 20, 5, 5);
  for (std::size_t i = 0; i < two.values.size(); ++i) two.values[i] |= other.values[i];
  CHECK(count_components(two) == 2);
}
