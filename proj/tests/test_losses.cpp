#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "shapeseg/losses.hpp"

using namespace shapeseg;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("shape_loss basics") {
  std::vector<double> b0(12, 0.0);
  CHECK(shape_loss(b0, b0) == 0.0);

  std::vector<double> bt(12, 0.0);
  bt[0] = 1.0;
  CHECK(shape_loss(bt, b0) == Catch::Approx(1.0 / 12.0).epsilon(1e-12));

  Rng rng(1);
  const auto a = random_vec(rng, 12, -3, 3);
  const auto b = random_vec(rng, 12, -3, 3);
  // Independent re-summation oracle.
  double acc = 0.0;
  for (int i = 0; i < 12; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::abs(shape_loss(a, b) - acc / 12.0) < 1e-12);

  std::vector<double> wrong(5, 0.0);
  CHECK_THROWS_AS(shape_loss(a, wrong), std::invalid_argument);
}

TEST_CASE("pose_loss basics") {
  std::vector<double> o0{0, 0, 0};
  CHECK(pose_loss(o0, o0) == 0.0);
  std::vector<double> ot{0.5, 0, 0};
  CHECK(pose_loss(ot, o0) == Catch::Approx(0.25 / 3.0).epsilon(1e-12));
  Rng rng(2);
  const auto a = random_vec(rng, 3, -1, 1);
  const auto b = random_vec(rng, 3, -1, 1);
  CHECK(pose_loss(a, b) == pose_loss(b, a));
}

TEST_CASE("segmentation_loss at perfect saturated agreement") {
  Rng rng(3);
  const std::size_t px = 256;
  std::vector<double> d(2 * px);
  for (auto& v : d) {
    v = rng.uniform(3.0, 20.0);
    if (rng.uniform() < 0.4) v = -v;
  }
  const auto terms = segmentation_loss<double>(d, d, 2, px, 5.0);
  CHECK(terms.mse == 0.0);
  CHECK(terms.dice >= 0.0);
  CHECK(terms.dice < 1e-5);
}

TEST_CASE("segmentation_loss single-pixel hand example") {
  // 1x1 image, K = 1, D_t = -3, D_p = +3, alpha = 5.
  const std::vector<double> dt{-3.0};
  const std::vector<double> dp{3.0};
  const auto terms = segmentation_loss<double>(dt, dp, 1, 1, 5.0);
  CHECK(terms.mse == Catch::Approx(36.0).epsilon(1e-12));

  const double st = soft_binarize_value(-3.0, 5.0);
  const double sp = soft_binarize_value(3.0, 5.0);
  CHECK(st == Catch::Approx(0.999999694).margin(1e-9));
  CHECK(sp == Catch::Approx(3.06e-7).margin(1e-9));
  const double expect_dice = 1.0 - 2.0 * st * sp / (st + sp + kDiceEps);
  CHECK(terms.dice == Catch::Approx(expect_dice).margin(1e-15));
  CHECK(terms.dice == Catch::Approx(0.9999994).margin(1e-6));
}

TEST_CASE("segmentation_loss of a constant shift is the squared shift") {
  Rng rng(4);
  const std::size_t px = 64;
  std::vector<double> dt = random_vec(rng, 2 * px, -10, 10);
  std::vector<double> dp(dt);
  const double delta = 1.75;
  for (auto& v : dp) v += delta;
  const auto terms = segmentation_loss<double>(dt, dp, 2, px, 5.0);
  CHECK(terms.mse == Catch::Approx(delta * delta).epsilon(1e-12));
}

TEST_CASE("segmentation_loss is invariant under a shared pixel permutation") {
  Rng rng(5);
  const std::size_t px = 128;
  std::vector<double> dt = random_vec(rng, px, -8, 8);
  std::vector<double> dp = random_vec(rng, px, -8, 8);
  std::vector<std::size_t> perm(px);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  std::vector<double> dt2(px), dp2(px);
  for (std::size_t i = 0; i < px; ++i) {
    dt2[i] = dt[perm[i]];
    dp2[i] = dp[perm[i]];
  }
  const auto a = segmentation_loss<double>(dt, dp, 1, px, 5.0);
  const auto b = segmentation_loss<double>(dt2, dp2, 1, px, 5.0);
  CHECK(a.dice == Catch::Approx(b.dice).epsilon(1e-12));
  CHECK(a.mse == Catch::Approx(b.mse).epsilon(1e-12));
}

TEST_CASE("total_loss combines components with the configured weights") {
  const LossWeights w;  // paper defaults 1, 10, 100, 0.1
  CHECK(total_loss(0, 0, 0, 0, w).total == 0.0);
  CHECK(total_loss(1, 1, 1, 1, w).total == Catch::Approx(121.0).epsilon(1e-12));

  LossWeights scaled = w;
  scaled.gamma1 *= 3.0;
  scaled.gamma2 *= 3.0;
  scaled.gamma3 *= 3.0;
  CHECK(total_loss(0.3, 0.7, 0.2, 1.1, scaled).total ==
        Catch::Approx(3.0 * total_loss(0.3, 0.7, 0.2, 1.1, w).total).epsilon(1e-12));

  CHECK_THROWS_AS(total_loss(-1, 0, 0, 0, w), std::invalid_argument);
}

TEST_CASE("gradient check: shape and pose losses") {
  Rng rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> bt = random_vec(rng, 12, -3, 3);
    std::vector<double> bp = random_vec(rng, 12, -3, 3);
    std::vector<double> grad(12, 0.0);
    mse_loss_grad<double>(bt, bp, 1.0, grad);
    auto f = [&](std::span<const double> x) { return mse_loss<double>(bt, x); };
    CHECK(max_gradient_rel_error(f, bp, grad, 1e-5, rng) < 1e-6);
  }
}

TEST_CASE("gradient check: segmentation loss terms") {
  Rng rng(7);
  const std::size_t px = 256;  // 16 x 16
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> dt = random_vec(rng, 2 * px, -6, 6);
    std::vector<double> dp = random_vec(rng, 2 * px, -6, 6);

    {  // Dice term alone
      std::vector<double> grad(2 * px, 0.0);
      segmentation_loss_grad<double>(dt, dp, 2, px, 5.0, 1.0, 0.0, grad);
      auto f = [&](std::span<const double> x) {
        return segmentation_loss<double>(dt, x, 2, px, 5.0).dice;
      };
      CHECK(max_gradient_rel_error(f, dp, grad, 1e-5, rng) < 1e-4);
    }
    {  // MSE term alone
      std::vector<double> grad(2 * px, 0.0);
      segmentation_loss_grad<double>(dt, dp, 2, px, 5.0, 0.0, 1.0, grad);
      auto f = [&](std::span<const double> x) {
        return segmentation_loss<double>(dt, x, 2, px, 5.0).mse;
      };
      CHECK(max_gradient_rel_error(f, dp, grad, 1e-5, rng) < 1e-5);
    }
  }
}

TEST_CASE("total gradient is the weighted sum of component gradients") {
  Rng rng(8);
  const std::size_t px = 64;
  std::vector<double> dt = random_vec(rng, px, -6, 6);
  std::vector<double> dp = random_vec(rng, px, -6, 6);
  const LossWeights w;

  std::vector<double> combined(px, 0.0), dice_only(px, 0.0), mse_only(px, 0.0);
  segmentation_loss_grad<double>(dt, dp, 1, px, w.alpha, w.gamma3, w.gamma3 * w.mu, combined);
  segmentation_loss_grad<double>(dt, dp, 1, px, w.alpha, 1.0, 0.0, dice_only);
  segmentation_loss_grad<double>(dt, dp, 1, px, w.alpha, 0.0, 1.0, mse_only);
  for (std::size_t i = 0; i < px; ++i) {
    const double expect = w.gamma3 * dice_only[i] + w.gamma3 * w.mu * mse_only[i];
    CHECK(combined[i] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("gradient vanishes at a saturated perfect minimum") {
  Rng rng(9);
  const std::size_t px = 256;
  std::vector<double> d(px);
  for (auto& v : d) {
    v = rng.uniform(5.0, 25.0);
    if (rng.uniform() < 0.4) v = -v;
  }
  std::vector<double> grad(px, 0.0);
  segmentation_loss_grad<double>(d, d, 1, px, 5.0, 1.0, 0.1, grad);
  double inf_norm = 0.0;
  for (double g : grad) inf_norm = std::max(inf_norm, std::abs(g));
  CHECK(inf_norm < 1e-8);
}

TEST_CASE("L3 mse decreases along its negative gradient") {
  Rng rng(10);
  const std::size_t px = 128;
  std::vector<double> dt = random_vec(rng, px, -8, 8);
  std::vector<double> dp = random_vec(rng, px, -8, 8);
  std::vector<double> grad(px, 0.0);
  segmentation_loss_grad<double>(dt, dp, 1, px, 5.0, 0.0, 1.0, grad);
  const double before = segmentation_loss<double>(dt, dp, 1, px, 5.0).mse;
  std::vector<double> stepped(dp);
  for (std::size_t i = 0; i < px; ++i) stepped[i] -= 0.05 * grad[i];
  const double after = segmentation_loss<double>(dt, stepped, 1, px, 5.0).mse;
  CHECK(after < before);
}
