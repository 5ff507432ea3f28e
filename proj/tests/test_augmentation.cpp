#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "shapeseg/augmentation.hpp"
#include "test_support.hpp"

using namespace shapeseg;

namespace {

StatShapeModel small_model(Rng& rng, std::vector<LandmarkShape>* shapes_out = nullptr) {
  std::vector<ShapeVector> vecs;
  std::vector<LandmarkShape> shapes;
  for (int i = 0; i < 20; ++i) {
    const auto s = testsup::random_landmark_shape(rng, {0, 0});
    shapes.push_back(s);
    vecs.push_back(to_shape_vector(s));
  }
  if (shapes_out) *shapes_out = shapes;
  return fit(vecs);
}

}  // namespace

TEST_CASE("draw honors degenerate ranges and is deterministic") {
  AugmentRanges zero;
  zero.translation = {0, 0};
  zero.rotation = {0, 0};
  zero.coefficient = {0, 0};
  zero.noise_sigma = {0, 0};
  Rng rng(1);
  const AugmentSample s = draw(rng, zero, 12);
  CHECK(s.dcx == 0.0);
  CHECK(s.dcy == 0.0);
  CHECK(s.dtheta == 0.0);
  CHECK(s.sigma == 0.0);
  for (double a : s.a) CHECK(a == 0.0);

  Rng r1(42), r2(42);
  const AugmentRanges def;
  for (int i = 0; i < 50; ++i) {
    const AugmentSample a = draw(r1, def, 12);
    const AugmentSample b = draw(r2, def, 12);
    CHECK(a.dcx == b.dcx);
    CHECK(a.dtheta == b.dtheta);
    CHECK(a.a == b.a);
    CHECK(a.sigma == b.sigma);
  }
}

TEST_CASE("draw produces near-zero-mean rotation offsets") {
  const AugmentRanges def;  // rotation uniform on [-pi, pi]
  Rng rng(7);
  double mean = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += draw(rng, def, 1).dtheta;
  mean /= n;
  const double se = (2.0 * M_PI / std::sqrt(12.0)) / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("augment_shape with a zero sample is the identity") {
  Rng rng(11);
  std::vector<LandmarkShape> shapes;
  const StatShapeModel model = small_model(rng, &shapes);
  AugmentSample zero;
  zero.a.assign(12, 0.0);
  const PoseParams pose(0.4, 64.0, 60.0);
  LandmarkShape placed = apply_pose(to_shape_vector(shapes[0]), pose);
  const auto [aug, pose_aug] = augment_shape(placed, pose, model, zero);
  for (int k = 0; k < placed.n(); ++k) {
    CHECK(distance(aug.endo[k], placed.endo[k]) < 1e-9);
    CHECK(distance(aug.epi[k], placed.epi[k]) < 1e-9);
  }
  CHECK(pose_aug.theta == Catch::Approx(pose.theta));
  CHECK(pose_aug.cx == Catch::Approx(pose.cx));
}

TEST_CASE("augment_shape translation moves every landmark") {
  Rng rng(13);
  std::vector<LandmarkShape> shapes;
  const StatShapeModel model = small_model(rng, &shapes);
  AugmentSample s;
  s.a.assign(12, 0.0);
  s.dcx = 10.0;
  const PoseParams pose(0.0, 64.0, 64.0);
  LandmarkShape placed = apply_pose(to_shape_vector(shapes[1]), pose);
  const auto [aug, pose_aug] = augment_shape(placed, pose, model, s);
  for (int k = 0; k < placed.n(); ++k) {
    CHECK(distance(aug.endo[k], placed.endo[k] + Point2{10.0, 0.0}) < 1e-9);
  }
  CHECK(pose_aug.cx == Catch::Approx(74.0));
}

TEST_CASE("augment_shape shifts projected coefficients by the drawn offsets") {
  Rng rng(17);
  std::vector<LandmarkShape> shapes;
  const StatShapeModel model = small_model(rng, &shapes);
  const int m = std::min(12, model.rank());
  AugmentSample s;
  s.a.resize(m);
  for (int i = 0; i < m; ++i) s.a[i] = rng.uniform(-1, 1);
  s.dcx = 5.0;
  s.dtheta = 0.7;

  const PoseParams pose(-0.5, 64.0, 64.0);
  LandmarkShape placed = apply_pose(to_shape_vector(shapes[2]), pose);
  const auto [aug, pose_aug] = augment_shape(placed, pose, model, s);

  const ShapeCoefficients b0 = project(normalize_pose(placed, pose), model, m);
  const ShapeCoefficients b1 = project(normalize_pose(aug, pose_aug), model, m);
  for (int i = 0; i < m; ++i) CHECK(b1[i] - b0[i] == Catch::Approx(s.a[i]).margin(1e-6));
}

TEST_CASE("draw_valid retries until the center stays inside the grid") {
  GridSpec grid{64, 64, 2.0};
  AugmentRanges ranges;
  ranges.translation = {-40.0, 40.0};
  const PoseParams pose(0.0, 64.0, 64.0);
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const AugmentSample s = draw_valid(rng, ranges, 12, pose, grid);
    CHECK(grid.contains_mm({pose.cx + s.dcx, pose.cy + s.dcy}));
  }

  // A pose already at the border with huge offsets cannot be fixed in 10 draws.
  AugmentRanges impossible;
  impossible.translation = {500.0, 600.0};
  CHECK_THROWS_AS(draw_valid(rng, impossible, 12, pose, grid), RuntimeError);
}

TEST_CASE("tps_fit identity and translation have zero kernel energy") {
  Rng rng(23);
  const auto shape = testsup::random_landmark_shape(rng, {40, 40});
  std::vector<Point2> src = shape.endo;
  src.insert(src.end(), shape.epi.begin(), shape.epi.end());

  const TpsTransform ident = tps_fit(src, src);
  CHECK(ident.kernel_w.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(ident.affine(0, 0) == Catch::Approx(0.0).margin(1e-9));
  CHECK(ident.affine(1, 0) == Catch::Approx(1.0).margin(1e-9));
  CHECK(ident.affine(2, 1) == Catch::Approx(1.0).margin(1e-9));
  const Point2 probe{17.0, 63.0};
  CHECK(distance(ident.apply(probe), probe) < 1e-8);

  std::vector<Point2> moved(src);
  for (auto& p : moved) p += {7.5, -3.25};
  const TpsTransform trans = tps_fit(src, moved);
  CHECK(trans.kernel_w.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(distance(trans.apply(probe), probe + Point2{7.5, -3.25}) < 1e-8);
}

TEST_CASE("tps_fit reproduces an affine map with zero kernel energy") {
  Rng rng(27);
  const auto shape = testsup::random_landmark_shape(rng, {0, 0});
  std::vector<Point2> src = shape.endo;
  src.insert(src.end(), shape.epi.begin(), shape.epi.end());
  std::vector<Point2> dst(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = {1.3 * src[i].x - 0.2 * src[i].y + 4.0, 0.4 * src[i].x + 0.9 * src[i].y - 2.0};
  }
  const TpsTransform t = tps_fit(src, dst);
  CHECK(t.kernel_w.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("tps_fit interpolates random targets exactly") {
  Rng rng(29);
  const auto shape = testsup::random_landmark_shape(rng, {40, 40});
  std::vector<Point2> src = shape.endo;
  src.insert(src.end(), shape.epi.begin(), shape.epi.end());
  std::vector<Point2> dst(src);
  for (auto& p : dst) p += {rng.uniform(-5, 5), rng.uniform(-5, 5)};

  const TpsTransform t = tps_fit(src, dst);
  for (std::size_t i = 0; i < src.size(); ++i) {
    CHECK(distance(t.apply(src[i]), dst[i]) < 1e-8);
  }

  // Moment constraints on the kernel weights.
  double s0x = 0, s0y = 0, sxx = 0, sxy = 0, syx = 0, syy = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    s0x += t.kernel_w(static_cast<Eigen::Index>(i), 0);
    s0y += t.kernel_w(static_cast<Eigen::Index>(i), 1);
    sxx += t.kernel_w(static_cast<Eigen::Index>(i), 0) * src[i].x;
    sxy += t.kernel_w(static_cast<Eigen::Index>(i), 0) * src[i].y;
    syx += t.kernel_w(static_cast<Eigen::Index>(i), 1) * src[i].x;
    syy += t.kernel_w(static_cast<Eigen::Index>(i), 1) * src[i].y;
  }
  for (double v : {s0x, s0y, sxx, sxy, syx, syy}) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("tps_fit rejects degenerate control points") {
  std::vector<Point2> line{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  CHECK_THROWS_AS(tps_fit(line, line), std::invalid_argument);
  std::vector<Point2> dup{{0, 0}, {0, 0}, {1, 2}, {3, 1}};
  CHECK_THROWS_AS(tps_fit(dup, dup), std::invalid_argument);
}

TEST_CASE("warp_image identity and integer translation") {
  GridSpec grid{32, 32, 2.0};
  Rng rng(31);
  std::vector<float> img(32 * 32);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0, 1));

  const auto shape = testsup::random_landmark_shape(rng, {32, 32});
  std::vector<Point2> src = shape.endo;
  src.insert(src.end(), shape.epi.begin(), shape.epi.end());

  const std::vector<float> same = warp_image(img, grid, tps_fit(src, src));
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(std::abs(same[i] - img[i]) < 1e-6);
  }

  // 2 px = 4 mm shift along +x; backward map: output -> input is -4 mm.
  std::vector<Point2> back(src);
  for (auto& p : back) p += {-4.0, 0.0};
  const std::vector<float> shifted = warp_image(img, grid, tps_fit(src, back));
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      const float expect = (j >= 2) ? img[static_cast<std::size_t>(i) * 32 + (j - 2)] : 0.0f;
      CHECK(std::abs(shifted[static_cast<std::size_t>(i) * 32 + j] - expect) < 1e-5);
    }
  }
}

TEST_CASE("warp_image matches a direct per-pixel evaluation") {
  GridSpec grid{24, 24, 2.0};
  Rng rng(37);
  std::vector<float> img(24 * 24);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0, 1));
  const auto shape = testsup::random_landmark_shape(rng, {24, 24});
  std::vector<Point2> src = shape.endo;
  src.insert(src.end(), shape.epi.begin(), shape.epi.end());
  std::vector<Point2> dst(src);
  for (auto& p : dst) p += {rng.uniform(-4, 4), rng.uniform(-4, 4)};
  const TpsTransform t = tps_fit(src, dst);
  const std::vector<float> warped = warp_image(img, grid, t);

  for (int i = 0; i < 24; ++i) {
    for (int j = 0; j < 24; ++j) {
      const Point2 q = t.apply(grid.pixel_center_mm(i, j));
      const double col = q.x / grid.pixel_size - 0.5;
      const double row = q.y / grid.pixel_size - 0.5;
      const int c0 = static_cast<int>(std::floor(col));
      const int r0 = static_cast<int>(std::floor(row));
      const double fc = col - c0, fr = row - r0;
      auto sample = [&](int r, int c) -> double {
        if (r < 0 || r >= 24 || c < 0 || c >= 24) return 0.0;
        return img[static_cast<std::size_t>(r) * 24 + c];
      };
      const double direct =
          (1.0 - fr) * ((1.0 - fc) * sample(r0, c0) + fc * sample(r0, c0 + 1)) +
          fr * ((1.0 - fc) * sample(r0 + 1, c0) + fc * sample(r0 + 1, c0 + 1));
      CHECK(std::abs(warped[static_cast<std::size_t>(i) * 24 + j] -
                     static_cast<float>(direct)) < 1e-9);
    }
  }
}

TEST_CASE("add_noise statistics") {
  Rng rng(41);
  std::vector<float> img(128 * 128, 0.5f);
  add_noise(img, 0.0, rng);
  for (float v : img) CHECK(v == 0.5f);

  add_noise(img, 0.1, rng);
  double mean = 0.0;
  for (float v : img) mean += v;
  mean /= img.size();
  double var = 0.0;
  for (float v : img) var += (v - mean) * (v - mean);
  var /= (img.size() - 1.0);
  CHECK(std::abs(std::sqrt(var) - 0.1) < 0.005);
  CHECK(std::abs(mean - 0.5) < 3.0 * 0.1 / std::sqrt(static_cast<double>(img.size())));
}
