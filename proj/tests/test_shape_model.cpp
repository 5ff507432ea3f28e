#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "shapeseg/shape_model.hpp"
#include "test_support.hpp"

using namespace shapeseg;

namespace {

std::vector<ShapeVector> random_training_set(Rng& rng, int count, int n = 18) {
  std::vector<ShapeVector> out;
  for (int i = 0; i < count; ++i) {
    const auto s = testsup::random_landmark_shape(rng, {0, 0}, n);
    out.push_back(to_shape_vector(s));
  }
  return out;
}

double mean_landmark_error(const ShapeVector& a, const ShapeVector& b) {
  const LandmarkShape sa = from_shape_vector(a);
  const LandmarkShape sb = from_shape_vector(b);
  double acc = 0.0;
  for (int k = 0; k < sa.n(); ++k) {
    acc += distance(sa.endo[k], sb.endo[k]) + distance(sa.epi[k], sb.epi[k]);
  }
  return acc / (2.0 * sa.n());
}

}  // namespace

TEST_CASE("normalize_pose matches the rotation convention") {
  LandmarkShape s;
  s.endo.assign(8, {1.0, 0.0});
  s.epi.assign(8, {2.0, 0.0});

  // Identity pose leaves coordinates unchanged.
  const ShapeVector v0 = normalize_pose(s, PoseParams(0.0, 0.0, 0.0));
  CHECK(v0[0] == Catch::Approx(1.0));
  CHECK(v0[16] == Catch::Approx(0.0).margin(1e-12));

  // p - c = (1, 0), theta = pi/2 -> (0, -1).
  const Point2 q = normalize_point({1.0, 0.0}, PoseParams(M_PI / 2, 0.0, 0.0));
  CHECK(q.x == Catch::Approx(0.0).margin(1e-12));
  CHECK(q.y == Catch::Approx(-1.0));
}

TEST_CASE("apply_pose inverts normalize_pose") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const auto shape =
        testsup::random_landmark_shape(rng, {rng.uniform(-5, 5), rng.uniform(-5, 5)});
    const PoseParams pose(rng.uniform(-M_PI, M_PI), rng.uniform(-10, 10), rng.uniform(-10, 10));
    const LandmarkShape back = apply_pose(normalize_pose(shape, pose), pose);
    for (int k = 0; k < shape.n(); ++k) {
      CHECK(distance(back.endo[k], shape.endo[k]) < 1e-9);
      CHECK(distance(back.epi[k], shape.epi[k]) < 1e-9);
    }
  }
}

TEST_CASE("apply_pose with a translation-only pose shifts every landmark") {
  Rng rng(11);
  const auto shape = testsup::random_landmark_shape(rng, {0, 0});
  const ShapeVector v = to_shape_vector(shape);
  const LandmarkShape moved = apply_pose(v, PoseParams(0.0, 10.0, -5.0));
  for (int k = 0; k < shape.n(); ++k) {
    CHECK(distance(moved.endo[k], shape.endo[k] + Point2{10.0, -5.0}) < 1e-12);
    CHECK(distance(moved.epi[k], shape.epi[k] + Point2{10.0, -5.0}) < 1e-12);
  }
}

TEST_CASE("fit on two shapes gives their midpoint and one mode") {
  Rng rng(7);
  auto shapes = random_training_set(rng, 2);
  const StatShapeModel model = fit(shapes);
  const ShapeVector expected_mean = 0.5 * (shapes[0] + shapes[1]);
  CHECK((model.mean - expected_mean).norm() < 1e-12);
  REQUIRE(model.rank() == 1);
  const Eigen::VectorXd dir = (shapes[0] - shapes[1]).normalized();
  CHECK(std::abs(std::abs(model.modes.col(0).dot(dir)) - 1.0) < 1e-12);
}

TEST_CASE("fit yields unit-variance, zero-mean training coefficients") {
  Rng rng(17);
  auto shapes = random_training_set(rng, 25);
  const StatShapeModel model = fit(shapes);
  REQUIRE(model.rank() >= 2);
  CHECK(model.training_count == 25);

  for (int m = 0; m < model.rank(); ++m) {
    double mean = 0.0, sq = 0.0;
    for (const auto& s : shapes) {
      const double b = project(s, model, model.rank())[m];
      mean += b;
      sq += b * b;
    }
    mean /= shapes.size();
    const double var = (sq - shapes.size() * mean * mean) / (shapes.size() - 1.0);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);
  }
}

TEST_CASE("fit keeps modes orthonormal with descending eigenvalues") {
  Rng rng(19);
  auto shapes = random_training_set(rng, 30);
  const StatShapeModel model = fit(shapes);
  const Eigen::MatrixXd gram = model.modes.transpose() * model.modes;
  CHECK((gram - Eigen::MatrixXd::Identity(model.rank(), model.rank())).cwiseAbs().maxCoeff() <
        1e-9);
  for (int m = 1; m < model.rank(); ++m) {
    CHECK(model.eigenvalues[m] <= model.eigenvalues[m - 1]);
  }
}

TEST_CASE("fit drops zero-variance modes entirely") {
  Rng rng(23);
  const ShapeVector one = to_shape_vector(testsup::random_landmark_shape(rng, {0, 0}));
  std::vector<ShapeVector> copies(5, one);
  const StatShapeModel model = fit(copies);
  CHECK(model.rank() == 0);
}

TEST_CASE("fit rejects bad input") {
  Rng rng(29);
  auto shapes = random_training_set(rng, 2);
  CHECK_THROWS_AS(fit({shapes[0]}), std::invalid_argument);
  auto bad = shapes;
  bad.push_back(ShapeVector::Zero(8));
  CHECK_THROWS_AS(fit(bad), std::invalid_argument);
}

TEST_CASE("project/reconstruct basics and roundtrip") {
  Rng rng(37);
  auto shapes = random_training_set(rng, 20);
  const StatShapeModel model = fit(shapes);
  const int rank = model.rank();

  const ShapeCoefficients b_mean = project(model.mean, model, rank);
  CHECK(b_mean.cwiseAbs().maxCoeff() < 1e-9);

  ShapeVector s1 = model.mean + 2.0 * std::sqrt(model.eigenvalues[0]) * model.modes.col(0);
  const ShapeCoefficients b1 = project(s1, model, rank);
  CHECK(b1[0] == Catch::Approx(2.0).margin(1e-9));
  for (int m = 1; m < rank; ++m) CHECK(std::abs(b1[m]) < 1e-9);

  CHECK((reconstruct(ShapeCoefficients::Zero(0), model, 0) - model.mean).norm() < 1e-12);
  ShapeCoefficients unit = ShapeCoefficients::Zero(1);
  unit[0] = 1.0;
  const ShapeVector rec1 = reconstruct(unit, model, 1);
  CHECK((rec1 - (model.mean + std::sqrt(model.eigenvalues[0]) * model.modes.col(0))).norm() <
        1e-12);

  for (const auto& s : shapes) {
    const ShapeVector rec = reconstruct(project(s, model, rank), model, rank);
    CHECK((rec - s).norm() / s.norm() < 1e-6);
  }

  CHECK_THROWS_AS(project(shapes[0], model, rank + 1), std::invalid_argument);
  CHECK_THROWS_AS(reconstruct(ShapeCoefficients::Zero(3), model, 4), std::invalid_argument);
}

TEST_CASE("reconstruction error is non-increasing in mode count") {
  Rng rng(41);
  auto shapes = random_training_set(rng, 24);
  const StatShapeModel model = fit(shapes);
  double prev = 1e300;
  for (int m = 0; m <= model.rank(); ++m) {
    double err = 0.0;
    for (const auto& s : shapes) {
      const ShapeCoefficients b = project(s, model, m);
      err += mean_landmark_error(reconstruct(b, model, m), s);
    }
    err /= shapes.size();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("pose parameter normalization roundtrip") {
  GridSpec grid{64, 64, 2.0};
  const PoseParams center_pose(0.0, 64.0, 64.0);
  const auto v = normalize_pose_params(center_pose, grid);
  CHECK(v[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(v[1] == Catch::Approx(0.0).margin(1e-15));
  CHECK(v[2] == Catch::Approx(0.0).margin(1e-15));

  CHECK(normalize_pose_params(PoseParams(M_PI, 64.0, 64.0), grid)[0] == Catch::Approx(1.0));

  Rng rng(43);
  for (int rep = 0; rep < 20; ++rep) {
    const PoseParams pose(rng.uniform(-M_PI, M_PI), rng.uniform(1.0, 127.0),
                          rng.uniform(1.0, 127.0));
    const PoseParams back = denormalize_pose_params(normalize_pose_params(pose, grid), grid);
    CHECK(std::abs(back.theta - pose.theta) < 1e-12);
    CHECK(std::abs(back.cx - pose.cx) < 1e-12);
    CHECK(std::abs(back.cy - pose.cy) < 1e-12);
  }

  CHECK_THROWS_AS(normalize_pose_params(PoseParams(0.0, 300.0, 64.0), grid),
                  std::invalid_argument);
}

TEST_CASE("shape model JSON serialization round-trips exactly") {
  Rng rng(47);
  auto shapes = random_training_set(rng, 12);
  const StatShapeModel model = fit(shapes);

  const auto path = std::filesystem::temp_directory_path() / "shapeseg_ssm_test.json";
  save_shape_model(model, path);
  const StatShapeModel loaded = load_shape_model(path);
  std::filesystem::remove(path);

  CHECK(loaded.n_landmarks == model.n_landmarks);
  CHECK(loaded.training_count == model.training_count);
  CHECK(loaded.mean == model.mean);
  CHECK(loaded.eigenvalues == model.eigenvalues);
  CHECK(loaded.modes == model.modes);
}
