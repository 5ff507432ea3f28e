#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "shapeseg/distance_field.hpp"
#include "shapeseg/grid_io.hpp"
#include "test_support.hpp"

using namespace shapeseg;
using testsup::circle_points;

namespace {

// Independent per-pixel oracle: even-odd sign plus a plain minimum over all
// dense segments, no acceleration structure.
DistanceMap brute_force_signed_distance(const Contour& contour, const GridSpec& grid) {
  std::vector<Point2> poly(contour.dense.size());
  for (std::size_t i = 0; i < poly.size(); ++i)
    poly[i] = {contour.dense[i].x / grid.pixel_size, contour.dense[i].y / grid.pixel_size};
  DistanceMap out;
  out.grid = grid;
  out.values.resize(static_cast<std::size_t>(grid.height) * grid.width);
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const Point2 p{j + 0.5, i + 0.5};
      const double d = min_distance(p, poly);
      const bool inside = d <= 1e-9 || detail::point_in_closed_poly(p, poly);
      out.at(i, j) = static_cast<float>(inside ? -d : d);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("signed_distance of a centered circle") {
  // 2 mm/px; circle of radius 20 mm = 10 px centered on the pixel grid.
  GridSpec grid{32, 32, 2.0};
  const Point2 c{32.0, 32.0};
  const Contour circ = closed_spline(circle_points(c, 20.0, 36));
  const DistanceMap d = signed_distance(circ, grid);

  // The four pixels around the exact center are sqrt(2)/2 px off-center.
  const double center_off = std::hypot(0.5, 0.5);
  CHECK(std::abs(d.at(15, 15) - (-(10.0 - center_off))) < 0.05);

  // A pixel whose center lies on the contour: (33, 52) is 20.02 mm from c.
  int on_i = -1, on_j = -1;
  double best = 1e9;
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      const Point2 p = grid.pixel_center_mm(i, j);
      if (std::abs(distance(p, c) - 20.0) < best) {
        best = std::abs(distance(p, c) - 20.0);
        on_i = i;
        on_j = j;
      }
    }
  }
  CHECK(std::abs(d.at(on_i, on_j)) <= best / grid.pixel_size + 0.05);
}

TEST_CASE("signed_distance matches the brute-force oracle") {
  Rng rng(55);
  GridSpec grid{32, 32, 2.0};
  for (int rep = 0; rep < 20; ++rep) {
    const Contour star = closed_spline(testsup::random_star(rng, {32, 32}, 16.0));
    const DistanceMap fast = signed_distance(star, grid);
    const DistanceMap slow = brute_force_signed_distance(star, grid);
    double worst = 0.0;
    for (std::size_t i = 0; i < fast.values.size(); ++i)
      worst = std::max(worst, static_cast<double>(std::abs(fast.values[i] - slow.values[i])));
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("signed_distance changes sign at row boundary crossings") {
  GridSpec grid{32, 32, 2.0};
  const Contour circ = closed_spline(circle_points({32.0, 32.0}, 20.0, 36));
  const DistanceMap d = signed_distance(circ, grid);
  // Row through the center: signs must be + outside, - inside, flipping twice.
  int flips = 0;
  for (int j = 1; j < 32; ++j) {
    if ((d.at(15, j) < 0) != (d.at(15, j - 1) < 0)) ++flips;
  }
  CHECK(flips == 2);
}

TEST_CASE("distance maps are 1-Lipschitz on the pixel lattice") {
  Rng rng(60);
  GridSpec grid{32, 32, 2.0};
  const Contour star = closed_spline(testsup::random_star(rng, {32, 32}, 14.0));
  const DistanceMap d = signed_distance(star, grid);
  for (int i = 0; i < 32; ++i) {
    for (int j = 1; j < 32; ++j) {
      CHECK(std::abs(d.at(i, j) - d.at(i, j - 1)) <= 1.0 + 2e-3);
    }
  }
}

TEST_CASE("soft_binarize values and properties") {
  GridSpec grid{16, 16, 1.0};
  DistanceMap d;
  d.grid = grid;
  d.values.assign(256, 0.0f);
  const SoftMask half = soft_binarize(d, 5.0);
  for (float v : half.values) CHECK(v == Catch::Approx(0.5));

  // Binarization error of 6.7e-3 at one pixel distance, alpha = 5.
  CHECK(soft_binarize_value(-1.0, 5.0) == Catch::Approx(0.993307).margin(5e-7));
  CHECK(soft_binarize_value(1.0, 5.0) == Catch::Approx(0.006693).margin(5e-7));

  // Exact antisymmetry; strict monotonicity within the range where the
  // sigmoid is resolvable in double precision (|alpha * D| < 36).
  Rng rng(71);
  double prev = soft_binarize_value(-7.0, 5.0);
  for (double x = -6.9; x <= 7.0; x += 0.1) {
    const double s = soft_binarize_value(x, 5.0);
    CHECK(s < prev);
    prev = s;
  }
  for (int rep = 0; rep < 100; ++rep) {
    const double x = rng.uniform(0, 7);
    CHECK(soft_binarize_value(-x, 5.0) == 1.0 - soft_binarize_value(x, 5.0));
  }
  for (int rep = 0; rep < 100; ++rep) {
    const double x = rng.uniform(-40, 40);
    CHECK(std::abs(soft_binarize_value(-x, 5.0) - (1.0 - soft_binarize_value(x, 5.0))) < 1e-15);
  }
  for (int rep = 0; rep < 100; ++rep) {
    const double x = rng.uniform(-7, 7);
    CHECK(soft_binarize_value(x, 5.0) > 0.0);
    CHECK(soft_binarize_value(x, 5.0) < 1.0);
  }

  // Saturation bound: |soft - hard| <= 6.7e-3 for |D| >= 1 at alpha = 5.
  for (double x = 1.0; x < 30.0; x += 0.25) {
    CHECK(soft_binarize_value(x, 5.0) <= 6.7e-3);
    CHECK(1.0 - soft_binarize_value(-x, 5.0) <= 6.7e-3);
  }

  CHECK_THROWS_AS(soft_binarize(d, 0.0), std::invalid_argument);
}

TEST_CASE("hard_binarize basics and geometric agreement") {
  GridSpec grid{32, 32, 2.0};
  const Contour circ = closed_spline(circle_points({32.0, 32.0}, 20.0, 36));
  const DistanceMap d = signed_distance(circ, grid);
  const BinaryMask m = hard_binarize(d);
  const double area_px = static_cast<double>(m.count());
  const double expect_px = M_PI * 10.0 * 10.0;
  CHECK(std::abs(area_px - expect_px) < 2.0 * M_PI * 10.0);  // within a perimeter band

  DistanceMap pos;
  pos.grid = grid;
  pos.values.assign(d.values.size(), 3.0f);
  CHECK(hard_binarize(pos).count() == 0);

  Rng rng(83);
  for (int rep = 0; rep < 20; ++rep) {
    const Contour star = closed_spline(testsup::random_star(rng, {32, 32}, 15.0));
    const DistanceMap ds = signed_distance(star, grid);
    const BinaryMask ms = hard_binarize(ds);
    for (int i = 0; i < grid.height; ++i) {
      for (int j = 0; j < grid.width; ++j) {
        if (std::abs(ds.at(i, j)) < 1e-6) continue;  // on-boundary pixels are a tie
        const Point2 p = grid.pixel_center_mm(i, j);
        CHECK(static_cast<bool>(ms.at(i, j)) == point_in_contour(p, star));
      }
    }
  }
}

TEST_CASE("maps_from_landmarks composes signed_distance per contour") {
  GridSpec grid{32, 32, 2.0};
  LandmarkShape s;
  const Point2 c{32.0, 32.0};
  s.endo = circle_points(c, 20.0, 18);
  s.epi = circle_points(c, 30.0, 18);
  const ClassMaps maps = maps_from_landmarks(s, grid);

  const double center_off = std::hypot(0.5, 0.5);
  CHECK(std::abs(maps.endo.at(15, 15) - (-(10.0 - center_off))) < 0.05);
  CHECK(std::abs(maps.epi.at(15, 15) - (-(15.0 - center_off))) < 0.05);

  // Nesting: endo interior is a subset of epi interior.
  for (std::size_t i = 0; i < maps.endo.values.size(); ++i) {
    if (maps.endo.values[i] < 0.0f) CHECK(maps.epi.values[i] < 0.0f);
  }

  // Exact composition with per-contour signed_distance.
  const DistanceMap endo_alone = signed_distance(closed_spline(s.endo), grid);
  CHECK(maps.endo.values == endo_alone.values);
}

TEST_CASE("class_masks splits cavity and myocardium") {
  GridSpec grid{32, 32, 2.0};
  LandmarkShape s;
  const Point2 c{32.0, 32.0};
  s.endo = circle_points(c, 20.0, 18);
  s.epi = circle_points(c, 30.0, 18);
  const ClassMaps maps = maps_from_landmarks(s, grid);
  const BinaryMask endo_m = hard_binarize(maps.endo);
  const BinaryMask epi_m = hard_binarize(maps.epi);
  const RegionMasks rm = class_masks(endo_m, epi_m);

  const double annulus_px = M_PI * (15.0 * 15.0 - 10.0 * 10.0);
  CHECK(std::abs(static_cast<double>(rm.myocardium.count()) - annulus_px) <
        2.0 * M_PI * 25.0);

  // Disjoint decomposition.
  for (std::size_t i = 0; i < epi_m.values.size(); ++i) {
    CHECK((rm.cavity.values[i] & rm.myocardium.values[i]) == 0);
    CHECK((rm.cavity.values[i] | rm.myocardium.values[i]) == epi_m.values[i]);
  }

  const RegionMasks same = class_masks(endo_m, endo_m);
  CHECK(same.myocardium.count() == 0);

  BinaryMask other;
  other.grid = GridSpec{16, 16, 2.0};
  other.values.assign(256, 0);
  CHECK_THROWS_AS(class_masks(endo_m, other), std::invalid_argument);
}

TEST_CASE("extract_zero_loops recovers the contour") {
  GridSpec grid{32, 32, 2.0};
  const Point2 c{32.0, 32.0};
  const Contour circ = closed_spline(circle_points(c, 20.0, 36));
  const DistanceMap d = signed_distance(circ, grid);
  const auto loops = extract_zero_loops(d);
  REQUIRE(loops.size() == 1);
  for (const Point2& p : loops[0]) {
    CHECK(std::abs(distance(p, c) - 20.0) < 0.2);
  }
  const Contour rec = closed_spline(loops[0]);
  CHECK(polygon_area(rec) == Catch::Approx(M_PI * 400.0).epsilon(0.02));
}

TEST_CASE("grid file round trip is bit exact") {
  Rng rng(91);
  GridData g;
  g.grid = GridSpec{24, 18, 2.0};
  g.channels = 2;
  g.values.resize(static_cast<std::size_t>(24) * 18 * 2);
  for (auto& v : g.values) v = static_cast<float>(rng.uniform(-40, 40));

  const auto path = std::filesystem::temp_directory_path() / "shapeseg_grid_test.sdm";
  save_grid(g, path);
  const GridData back = load_grid(path);
  std::filesystem::remove(path);

  CHECK(back.grid.height == 24);
  CHECK(back.grid.width == 18);
  CHECK(back.grid.pixel_size == Catch::Approx(2.0));
  CHECK(back.channels == 2);
  CHECK(back.values == g.values);

  std::string bytes = encode_grid(g);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_grid(bytes), RuntimeError);
  CHECK_THROWS_AS(decode_grid(encode_grid(g).substr(0, 40)), RuntimeError);
}
