#pragma once

// Composite training loss: coefficient MSE (L1), pose MSE (L2) and the
// distance-map segmentation loss (L3 = soft Dice + mu * MSE), plus analytic
// gradients and a central-difference gradient checker.

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "shapeseg/distance_field.hpp"
#include "shapeseg/rng.hpp"

namespace shapeseg {

struct LossWeights {
  double gamma1 = 1.0;
  double gamma2 = 10.0;
  double gamma3 = 100.0;
  double mu = 0.1;
  double alpha = 5.0;

  void validate() const {
    if (!(gamma1 > 0.0 && gamma2 > 0.0 && gamma3 > 0.0 && mu > 0.0 && alpha > 0.0))
      throw ConfigError("LossWeights: all weights must be > 0");
  }
};

struct LossBreakdown {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3_dice = 0.0;
  double l3_mse = 0.0;
  double total = 0.0;
};

inline constexpr double kDiceEps = 1e-7;

// Mean squared error over equal-length vectors; used for both the shape
// coefficient loss (L1) and the normalized pose loss (L2).
template <typename T>
double mse_loss(std::span<const T> truth, std::span<const T> pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("mse_loss: length mismatch");
  if (truth.empty()) throw std::invalid_argument("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = static_cast<double>(truth[i]) - static_cast<double>(pred[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(truth.size());
}

// d(mse)/d(pred), scaled by `scale`, accumulated into grad.
template <typename T>
void mse_loss_grad(std::span<const T> truth, std::span<const T> pred, double scale,
                   std::span<T> grad) {
  const double f = 2.0 * scale / static_cast<double>(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    grad[i] += static_cast<T>(f * (static_cast<double>(pred[i]) - static_cast<double>(truth[i])));
  }
}

inline double shape_loss(std::span<const double> b_true, std::span<const double> b_pred) {
  return mse_loss(b_true, b_pred);
}

inline double pose_loss(std::span<const double> o_true, std::span<const double> o_pred) {
  if (o_true.size() != 3 || o_pred.size() != 3)
    throw std::invalid_argument("pose_loss: expects 3 normalized pose values");
  return mse_loss(o_true, o_pred);
}

struct SegLossTerms {
  double dice = 0.0;
  double mse = 0.0;
};

// L3 on K stacked distance-map channels of X pixels each. S = sigmoid(-a D)
// is applied to truth and prediction alike.
template <typename T>
SegLossTerms segmentation_loss(std::span<const T> d_true, std::span<const T> d_pred, int k_classes,
                               std::size_t pixels, double alpha) {
  if (d_true.size() != d_pred.size() ||
      d_true.size() != static_cast<std::size_t>(k_classes) * pixels)
    throw std::invalid_argument("segmentation_loss: size mismatch");
  double dice_sum = 0.0;
  double sq = 0.0;
  for (int k = 0; k < k_classes; ++k) {
    const std::size_t off = static_cast<std::size_t>(k) * pixels;
    double num = 0.0, den = 0.0;
    for (std::size_t x = 0; x < pixels; ++x) {
      const double st = soft_binarize_value(d_true[off + x], alpha);
      const double sp = soft_binarize_value(d_pred[off + x], alpha);
      num += st * sp;
      den += st + sp;
      const double d = static_cast<double>(d_true[off + x]) - static_cast<double>(d_pred[off + x]);
      sq += d * d;
    }
    dice_sum += 2.0 * num / (den + kDiceEps);
  }
  return {1.0 - dice_sum / k_classes, sq / (static_cast<double>(k_classes) * pixels)};
}

// Gradient of (dice_scale * L3_dice + mse_scale * L3_mse) with respect to
// d_pred, accumulated into grad. Returns the loss terms of this instance.
template <typename T>
SegLossTerms segmentation_loss_grad(std::span<const T> d_true, std::span<const T> d_pred,
                                    int k_classes, std::size_t pixels, double alpha,
                                    double dice_scale, double mse_scale, std::span<T> grad) {
  if (grad.size() != d_pred.size())
    throw std::invalid_argument("segmentation_loss_grad: grad size mismatch");
  SegLossTerms terms;
  double dice_sum = 0.0, sq = 0.0;
  const double mse_f = 2.0 * mse_scale / (static_cast<double>(k_classes) * pixels);
  for (int k = 0; k < k_classes; ++k) {
    const std::size_t off = static_cast<std::size_t>(k) * pixels;
    double num = 0.0, den = 0.0;
    for (std::size_t x = 0; x < pixels; ++x) {
      const double st = soft_binarize_value(d_true[off + x], alpha);
      const double sp = soft_binarize_value(d_pred[off + x], alpha);
      num += st * sp;
      den += st + sp;
      const double d = static_cast<double>(d_true[off + x]) - static_cast<double>(d_pred[off + x]);
      sq += d * d;
    }
    const double n2 = 2.0 * num;
    const double m = den + kDiceEps;
    dice_sum += n2 / m;
    for (std::size_t x = 0; x < pixels; ++x) {
      const double st = soft_binarize_value(d_true[off + x], alpha);
      const double sp = soft_binarize_value(d_pred[off + x], alpha);
      // dDice_k/dS_p = (2 st m - n2) / m^2 ; dS_p/dD_p = -a sp (1 - sp);
      // L3_dice carries -(1/K) Dice_k.
      const double ddice_dsp = (2.0 * st * m - n2) / (m * m);
      const double dd = -(dice_scale / k_classes) * ddice_dsp * (-alpha * sp * (1.0 - sp));
      const double dm =
          mse_f * (static_cast<double>(d_pred[off + x]) - static_cast<double>(d_true[off + x]));
      grad[off + x] += static_cast<T>(dd + dm);
    }
  }
  terms.dice = 1.0 - dice_sum / k_classes;
  terms.mse = sq / (static_cast<double>(k_classes) * pixels);
  return terms;
}

inline SegLossTerms segmentation_loss(const ClassMaps& truth, const ClassMaps& pred,
                                      double alpha) {
  if (truth.endo.grid.height != pred.endo.grid.height ||
      truth.endo.grid.width != pred.endo.grid.width)
    throw std::invalid_argument("segmentation_loss: grid mismatch");
  const std::size_t pixels = truth.endo.values.size();
  std::vector<float> t(2 * pixels), p(2 * pixels);
  std::copy(truth.endo.values.begin(), truth.endo.values.end(), t.begin());
  std::copy(truth.epi.values.begin(), truth.epi.values.end(), t.begin() + pixels);
  std::copy(pred.endo.values.begin(), pred.endo.values.end(), p.begin());
  std::copy(pred.epi.values.begin(), pred.epi.values.end(), p.begin() + pixels);
  return segmentation_loss<float>(t, p, 2, pixels, alpha);
}

inline LossBreakdown total_loss(double l1, double l2, double l3_dice, double l3_mse,
                                const LossWeights& w) {
  if (l1 < 0.0 || l2 < 0.0 || l3_dice < 0.0 || l3_mse < 0.0)
    throw std::invalid_argument("total_loss: components must be >= 0");
  LossBreakdown b;
  b.l1 = l1;
  b.l2 = l2;
  b.l3_dice = l3_dice;
  b.l3_mse = l3_mse;
  b.total = w.gamma1 * l1 + w.gamma2 * l2 + w.gamma3 * (l3_dice + w.mu * l3_mse);
  return b;
}

// Central-difference check of an analytic gradient at `probes` randomly
// chosen coordinates. Returns the max relative error over the probes.
inline double max_gradient_rel_error(const std::function<double(std::span<const double>)>& f,
                                     std::span<double> x, std::span<const double> grad, double h,
                                     Rng& rng, int probes = 64) {
  if (h < 1e-6 || h > 1e-3) throw std::invalid_argument("gradient check: h out of [1e-6, 1e-3]");
  if (x.size() != grad.size()) throw std::invalid_argument("gradient check: size mismatch");
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const std::size_t i = static_cast<std::size_t>(rng.below(x.size()));
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
  }
  return worst;
}

}  // namespace shapeseg
