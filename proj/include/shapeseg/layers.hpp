#pragma once

// Network building blocks with hand-written backward passes: convolution
// (im2col + GEMM), batch normalization, PReLU, dense layers, pooling and
// upsampling. All cross-sample reductions run in a fixed order so training is
// bit-reproducible for a given seed.

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "shapeseg/rng.hpp"
#include "shapeseg/tensor.hpp"

namespace shapeseg {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;
using MapMatF = Eigen::Map<MatrixF>;
using ConstMapMatF = Eigen::Map<const MatrixF>;

struct Param {
  std::string name;
  std::vector<float> w;
  std::vector<float> g;
  std::vector<float> adam_m;
  std::vector<float> adam_v;

  void init_size(std::size_t size) {
    w.assign(size, 0.0f);
    g.assign(size, 0.0f);
    adam_m.assign(size, 0.0f);
    adam_v.assign(size, 0.0f);
  }
};

struct Buffer {
  std::string name;
  std::vector<float> v;
};

// Registry of trainable parameters and persistent buffers in construction
// order; the order defines the checkpoint layout and the Adam update order.
struct ParamRegistry {
  std::vector<Param*> params;
  std::vector<Buffer*> buffers;

  void add(Param* p) { params.push_back(p); }
  void add(Buffer* b) { buffers.push_back(b); }
  std::size_t total_params() const {
    std::size_t s = 0;
    for (const Param* p : params) s += p->w.size();
    return s;
  }
};

inline void he_init(Param& p, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : p.w) x = static_cast<float>(rng.normal(0.0, sd));
}

// ---------------------------------------------------------------------------

class Conv2D {
 public:
  Conv2D() = default;
  Conv2D(const std::string& name, int in_c, int out_c, int k, int stride, Rng& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride) {
    pad_before_ = (k - 1) / 2;
    pad_after_ = (k - 1) - pad_before_;
    weight_.name = name + ".weight";
    weight_.init_size(static_cast<std::size_t>(out_c) * in_c * k * k);
    he_init(weight_, static_cast<std::size_t>(in_c) * k * k, rng);
    bias_.name = name + ".bias";
    bias_.init_size(static_cast<std::size_t>(out_c));
  }

  // Registration is a separate phase so layers can be moved around freely
  // during network construction before pointers are taken.
  void register_params(ParamRegistry& reg) {
    reg.add(&weight_);
    reg.add(&bias_);
  }

  int out_size(int in) const { return (in + pad_before_ + pad_after_ - k_) / stride_ + 1; }

  Tensor forward(Tensor x) {
    input_ = std::move(x);
    const Tensor& in = input_;
    const int oh = out_size(in.h), ow = out_size(in.w);
    Tensor out(in.n, out_c_, oh, ow);
    if (k_ == 1 && stride_ == 1) {
      // 1x1 convolution: plain per-sample GEMM, no im2col.
      const Eigen::Index hw = static_cast<Eigen::Index>(in.h) * in.w;
      ConstMapMatF wmat(weight_.w.data(), out_c_, in_c_);
#pragma omp parallel for schedule(static)
      for (int b = 0; b < in.n; ++b) {
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            xm(in.data() + static_cast<std::size_t>(b) * in.sample_size(), in_c_, hw);
        Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> om(
            out.data() + static_cast<std::size_t>(b) * out.sample_size(), out_c_, hw);
        om.noalias() = wmat * xm;
        for (int oc = 0; oc < out_c_; ++oc) om.row(oc).array() += bias_.w[oc];
      }
      return out;
    }
    if (use_direct3(in.w)) {
      forward_direct3(in, out);
      return out;
    }
    const Eigen::Index rows = static_cast<Eigen::Index>(in_c_) * k_ * k_;
    const Eigen::Index cols = static_cast<Eigen::Index>(in.n) * oh * ow;
    cols_.resize(rows, cols);
    im2col(in, oh, ow);
    ConstMapMatF wmat(weight_.w.data(), out_c_, rows);
    MatrixF omat = wmat * cols_;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < in.n; ++b) {
      for (int oc = 0; oc < out_c_; ++oc) {
        const float bias = bias_.w[static_cast<std::size_t>(oc)];
        float* dst = out.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * oh * ow;
        const Eigen::Index base = static_cast<Eigen::Index>(b) * oh * ow;
        for (int p = 0; p < oh * ow; ++p) dst[p] = omat(oc, base + p) + bias;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dout) {
    const int oh = dout.h, ow = dout.w;
    if (k_ == 1 && stride_ == 1) {
      const Eigen::Index hw = static_cast<Eigen::Index>(oh) * ow;
      ConstMapMatF wmat(weight_.w.data(), out_c_, in_c_);
      MapMatF gw(weight_.g.data(), out_c_, in_c_);
      Tensor dx(input_.n, in_c_, oh, ow);
      // dW accumulates over samples in index order (deterministic).
      for (int b = 0; b < dout.n; ++b) {
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            dm(dout.data() + static_cast<std::size_t>(b) * dout.sample_size(), out_c_, hw);
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            xm(input_.data() + static_cast<std::size_t>(b) * input_.sample_size(), in_c_, hw);
        gw.noalias() += dm * xm.transpose();
      }
      for (int oc = 0; oc < out_c_; ++oc) {
        double sum = 0.0;
        for (int b = 0; b < dout.n; ++b) {
          const float* src =
              dout.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * hw;
          for (Eigen::Index i = 0; i < hw; ++i) sum += src[i];
        }
        bias_.g[static_cast<std::size_t>(oc)] += static_cast<float>(sum);
      }
#pragma omp parallel for schedule(static)
      for (int b = 0; b < dout.n; ++b) {
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
            dm(dout.data() + static_cast<std::size_t>(b) * dout.sample_size(), out_c_, hw);
        Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dxm(
            dx.data() + static_cast<std::size_t>(b) * dx.sample_size(), in_c_, hw);
        dxm.noalias() = wmat.transpose() * dm;
      }
      input_ = Tensor();
      return dx;
    }
    if (use_direct3(input_.w)) {
      Tensor dx = backward_direct3(dout);
      input_ = Tensor();
      return dx;
    }
    const Eigen::Index rows = static_cast<Eigen::Index>(in_c_) * k_ * k_;
    const Eigen::Index cols = static_cast<Eigen::Index>(dout.n) * oh * ow;
    // Gather dout into (out_c x B*OH*OW).
    MatrixF dmat(out_c_, cols);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < dout.n; ++b) {
      for (int oc = 0; oc < out_c_; ++oc) {
        const float* src = dout.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * oh * ow;
        const Eigen::Index base = static_cast<Eigen::Index>(b) * oh * ow;
        for (int p = 0; p < oh * ow; ++p) dmat(oc, base + p) = src[p];
      }
    }
    // Recompute cols (forward may be long gone for the cached shape).
    cols_.resize(rows, cols);
    im2col(input_, oh, ow);

    MapMatF gw(weight_.g.data(), out_c_, rows);
    gw.noalias() += dmat * cols_.transpose();
    for (int oc = 0; oc < out_c_; ++oc) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < cols; ++i) s += dmat(oc, i);
      bias_.g[static_cast<std::size_t>(oc)] += static_cast<float>(s);
    }

    ConstMapMatF wmat(weight_.w.data(), out_c_, rows);
    MatrixF dcols = wmat.transpose() * dmat;

    Tensor dx(input_.n, input_.c, input_.h, input_.w);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < input_.n; ++b) {
      for (int oi = 0; oi < oh; ++oi) {
        for (int oj = 0; oj < ow; ++oj) {
          const Eigen::Index col = static_cast<Eigen::Index>(b) * oh * ow + oi * ow + oj;
          Eigen::Index row = 0;
          for (int ic = 0; ic < in_c_; ++ic) {
            for (int ki = 0; ki < k_; ++ki) {
              const int ii = oi * stride_ - pad_before_ + ki;
              for (int kj = 0; kj < k_; ++kj, ++row) {
                const int jj = oj * stride_ - pad_before_ + kj;
                if (ii < 0 || ii >= input_.h || jj < 0 || jj >= input_.w) continue;
                dx.at(b, ic, ii, jj) += dcols(row, col);
              }
            }
          }
        }
      }
    }
    input_ = Tensor();  // release the cache
    return dx;
  }

  const Param& weight() const { return weight_; }
  int out_channels() const { return out_c_; }

 private:
  // The direct path needs wide rows to vectorize; narrow deep maps are
  // better served by the im2col GEMM.
  bool use_direct3(int width) const { return k_ == 3 && stride_ == 1 && width >= 24; }

  // Direct 3x3 stride-1 same-padding convolution. The im2col route collapses
  // to a very skinny GEMM for small channel counts; streaming the rows with
  // three FMAs per tap is several times faster and needs no scratch matrix.
  void forward_direct3(const Tensor& in, Tensor& out) const {
    const int h = in.h, w = in.w;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < in.n; ++b) {
      for (int oc = 0; oc < out_c_; ++oc) {
        float* op = out.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * out.plane();
        std::fill_n(op, out.plane(), bias_.w[static_cast<std::size_t>(oc)]);
        for (int ic = 0; ic < in_c_; ++ic) {
          const float* w9 =
              weight_.w.data() + (static_cast<std::size_t>(oc) * in_c_ + ic) * 9;
          const float* xp =
              in.data() + (static_cast<std::size_t>(b) * in_c_ + ic) * in.plane();
          for (int i = 0; i < h; ++i) {
            float* __restrict__ orow = op + static_cast<std::size_t>(i) * w;
            for (int ki = 0; ki < 3; ++ki) {
              const int ii = i - 1 + ki;
              if (ii < 0 || ii >= h) continue;
              const float* __restrict__ xrow = xp + static_cast<std::size_t>(ii) * w;
              const float w0 = w9[ki * 3], w1 = w9[ki * 3 + 1], w2 = w9[ki * 3 + 2];
              orow[0] += w1 * xrow[0] + w2 * xrow[1];
#pragma omp simd
              for (int j = 1; j < w - 1; ++j)
                orow[j] += w0 * xrow[j - 1] + w1 * xrow[j] + w2 * xrow[j + 1];
              orow[w - 1] += w0 * xrow[w - 2] + w1 * xrow[w - 1];
            }
          }
        }
      }
    }
  }

  Tensor backward_direct3(const Tensor& dout) {
    const int h = input_.h, w = input_.w;
    const int B = dout.n;
    Tensor dx(B, in_c_, h, w);
    // dX: correlate dout with the flipped kernel, channels transposed.
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
      for (int ic = 0; ic < in_c_; ++ic) {
        float* dp = dx.data() + (static_cast<std::size_t>(b) * in_c_ + ic) * dx.plane();
        for (int oc = 0; oc < out_c_; ++oc) {
          const float* w9 =
              weight_.w.data() + (static_cast<std::size_t>(oc) * in_c_ + ic) * 9;
          const float* yp =
              dout.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * dout.plane();
          for (int i = 0; i < h; ++i) {
            float* __restrict__ drow = dp + static_cast<std::size_t>(i) * w;
            for (int ki = 0; ki < 3; ++ki) {
              const int ii = i + 1 - ki;
              if (ii < 0 || ii >= h) continue;
              const float* __restrict__ yrow = yp + static_cast<std::size_t>(ii) * w;
              const float w0 = w9[ki * 3], w1 = w9[ki * 3 + 1], w2 = w9[ki * 3 + 2];
              // dx[i][j] += w[ki][kj] * dy[i+1-ki][j+1-kj]
              drow[0] += w1 * yrow[0] + w0 * yrow[1];
#pragma omp simd
              for (int j = 1; j < w - 1; ++j)
                drow[j] += w2 * yrow[j - 1] + w1 * yrow[j] + w0 * yrow[j + 1];
              drow[w - 1] += w2 * yrow[w - 2] + w1 * yrow[w - 1];
            }
          }
        }
      }
    }
    // dW and db: per-(oc,ic,tap) plane dot products, samples in fixed order.
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < out_c_; ++oc) {
      for (int ic = 0; ic < in_c_; ++ic) {
        float* gw = weight_.g.data() + (static_cast<std::size_t>(oc) * in_c_ + ic) * 9;
        for (int ki = 0; ki < 3; ++ki) {
          for (int kj = 0; kj < 3; ++kj) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
              const float* yp =
                  dout.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * dout.plane();
              const float* xp =
                  input_.data() + (static_cast<std::size_t>(b) * in_c_ + ic) * input_.plane();
              for (int i = 0; i < h; ++i) {
                const int ii = i - 1 + ki;
                if (ii < 0 || ii >= h) continue;
                const float* yrow = yp + static_cast<std::size_t>(i) * w;
                const float* xrow = xp + static_cast<std::size_t>(ii) * w;
                const int jlo = (kj == 0) ? 1 : 0;
                const int jhi = (kj == 2) ? w - 1 : w;
                float racc = 0.0f;  // per-row float so the loop vectorizes
#pragma omp simd reduction(+ : racc)
                for (int j = jlo; j < jhi; ++j) racc += yrow[j] * xrow[j - 1 + kj];
                acc += racc;
              }
            }
            gw[ki * 3 + kj] += static_cast<float>(acc);
          }
        }
      }
    }
    for (int oc = 0; oc < out_c_; ++oc) {
      double acc = 0.0;
      for (int b = 0; b < B; ++b) {
        const float* yp =
            dout.data() + (static_cast<std::size_t>(b) * out_c_ + oc) * dout.plane();
        for (std::size_t i = 0; i < dout.plane(); ++i) acc += yp[i];
      }
      bias_.g[static_cast<std::size_t>(oc)] += static_cast<float>(acc);
    }
    return dx;
  }

  void im2col(const Tensor& x, int oh, int ow) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < x.n; ++b) {
      for (int oi = 0; oi < oh; ++oi) {
        for (int oj = 0; oj < ow; ++oj) {
          const Eigen::Index col = static_cast<Eigen::Index>(b) * oh * ow + oi * ow + oj;
          float* dst = cols_.data() + col * cols_.rows();
          Eigen::Index row = 0;
          for (int ic = 0; ic < in_c_; ++ic) {
            const float* plane =
                x.data() + (static_cast<std::size_t>(b) * x.c + ic) * x.h * x.w;
            for (int ki = 0; ki < k_; ++ki) {
              const int ii = oi * stride_ - pad_before_ + ki;
              for (int kj = 0; kj < k_; ++kj, ++row) {
                const int jj = oj * stride_ - pad_before_ + kj;
                dst[row] = (ii < 0 || ii >= x.h || jj < 0 || jj >= x.w)
                               ? 0.0f
                               : plane[static_cast<std::size_t>(ii) * x.w + jj];
              }
            }
          }
        }
      }
    }
  }

  int in_c_ = 0, out_c_ = 0, k_ = 0, stride_ = 1;
  int pad_before_ = 0, pad_after_ = 0;
  Param weight_, bias_;
  Tensor input_;
  MatrixF cols_;
};

// ---------------------------------------------------------------------------

class BatchNorm2D {
 public:
  BatchNorm2D() = default;
  BatchNorm2D(const std::string& name, int channels) : c_(channels) {
    gamma_.name = name + ".gamma";
    gamma_.init_size(static_cast<std::size_t>(channels));
    std::fill(gamma_.w.begin(), gamma_.w.end(), 1.0f);
    beta_.name = name + ".beta";
    beta_.init_size(static_cast<std::size_t>(channels));
    running_mean_.name = name + ".running_mean";
    running_mean_.v.assign(static_cast<std::size_t>(channels), 0.0f);
    running_var_.name = name + ".running_var";
    running_var_.v.assign(static_cast<std::size_t>(channels), 1.0f);
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&gamma_);
    reg.add(&beta_);
    reg.add(&running_mean_);
    reg.add(&running_var_);
  }

  Tensor forward(const Tensor& x, bool train) {
    Tensor out(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane();
    const std::size_t spc = x.sample_size();
    const double count = static_cast<double>(x.n) * plane;
    if (train) {
      mean_.assign(c_, 0.0);
      var_.assign(c_, 0.0);
      xhat_ = Tensor(x.n, x.c, x.h, x.w);
#pragma omp parallel for schedule(static)
      for (int ch = 0; ch < c_; ++ch) {
        double s = 0.0, sq = 0.0;
        for (int b = 0; b < x.n; ++b) {
          const float* p = x.data() + b * spc + ch * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            s += p[i];
            sq += static_cast<double>(p[i]) * p[i];
          }
        }
        const double mean = s / count;
        const double var = std::max(sq / count - mean * mean, 0.0);
        mean_[ch] = mean;
        var_[ch] = var;
        const double inv = 1.0 / std::sqrt(var + kEps);
        const double g = gamma_.w[ch], bta = beta_.w[ch];
        for (int b = 0; b < x.n; ++b) {
          const float* p = x.data() + b * spc + ch * plane;
          float* xh = xhat_.data() + b * spc + ch * plane;
          float* o = out.data() + b * spc + ch * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            xh[i] = static_cast<float>((p[i] - mean) * inv);
            o[i] = static_cast<float>(g * xh[i] + bta);
          }
        }
        // Running stats: PyTorch-style momentum update, unbiased variance.
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        running_mean_.v[ch] =
            static_cast<float>((1.0 - kMomentum) * running_mean_.v[ch] + kMomentum * mean);
        running_var_.v[ch] =
            static_cast<float>((1.0 - kMomentum) * running_var_.v[ch] + kMomentum * unbiased);
      }
    } else {
#pragma omp parallel for schedule(static)
      for (int ch = 0; ch < c_; ++ch) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.v[ch]) + kEps);
        const double mean = running_mean_.v[ch];
        const double g = gamma_.w[ch], bta = beta_.w[ch];
        for (int b = 0; b < x.n; ++b) {
          const float* p = x.data() + b * spc + ch * plane;
          float* o = out.data() + b * spc + ch * plane;
          for (std::size_t i = 0; i < plane; ++i)
            o[i] = static_cast<float>(g * (p[i] - mean) * inv + bta);
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dout) {
    Tensor dx(dout.n, dout.c, dout.h, dout.w);
    const std::size_t plane = dout.plane();
    const std::size_t spc = dout.sample_size();
    const double count = static_cast<double>(dout.n) * plane;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c_; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int b = 0; b < dout.n; ++b) {
        const float* dy = dout.data() + b * spc + ch * plane;
        const float* xh = xhat_.data() + b * spc + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += static_cast<double>(dy[i]) * xh[i];
        }
      }
      gamma_.g[ch] += static_cast<float>(sum_dy_xhat);
      beta_.g[ch] += static_cast<float>(sum_dy);
      const double inv = 1.0 / std::sqrt(var_[ch] + kEps);
      const double g = gamma_.w[ch];
      const double mean_dy = sum_dy / count;
      const double mean_dy_xhat = sum_dy_xhat / count;
      for (int b = 0; b < dout.n; ++b) {
        const float* dy = dout.data() + b * spc + ch * plane;
        const float* xh = xhat_.data() + b * spc + ch * plane;
        float* d = dx.data() + b * spc + ch * plane;
        for (std::size_t i = 0; i < plane; ++i)
          d[i] = static_cast<float>(g * inv * (dy[i] - mean_dy - xh[i] * mean_dy_xhat));
      }
    }
    xhat_ = Tensor();
    return dx;
  }

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int c_ = 0;
  Param gamma_, beta_;
  Buffer running_mean_, running_var_;
  std::vector<double> mean_, var_;
  Tensor xhat_;
};

// ---------------------------------------------------------------------------

class PReLU {
 public:
  PReLU() = default;
  PReLU(const std::string& name, int channels) : c_(channels) {
    slope_.name = name + ".slope";
    slope_.init_size(static_cast<std::size_t>(channels));
    std::fill(slope_.w.begin(), slope_.w.end(), 0.25f);
  }

  void register_params(ParamRegistry& reg) { reg.add(&slope_); }

  Tensor forward(Tensor x) {
    input_ = std::move(x);
    const Tensor& in = input_;
    Tensor out(in.n, in.c, in.h, in.w);
    const std::size_t plane = in.plane();
    const std::size_t spc = in.sample_size();
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c_; ++ch) {
      const float a = slope_.w[ch];
      for (int b = 0; b < in.n; ++b) {
        const float* p = in.data() + b * spc + ch * plane;
        float* o = out.data() + b * spc + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] > 0.0f ? p[i] : a * p[i];
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dout) {
    Tensor dx(dout.n, dout.c, dout.h, dout.w);
    const std::size_t plane = dout.plane();
    const std::size_t spc = dout.sample_size();
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c_; ++ch) {
      const float a = slope_.w[ch];
      double da = 0.0;
      for (int b = 0; b < dout.n; ++b) {
        const float* p = input_.data() + b * spc + ch * plane;
        const float* dy = dout.data() + b * spc + ch * plane;
        float* d = dx.data() + b * spc + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (p[i] > 0.0f) {
            d[i] = dy[i];
          } else {
            d[i] = a * dy[i];
            da += static_cast<double>(dy[i]) * p[i];
          }
        }
      }
      slope_.g[ch] += static_cast<float>(da);
    }
    input_ = Tensor();
    return dx;
  }

 private:
  int c_ = 0;
  Param slope_;
  Tensor input_;
};

// ---------------------------------------------------------------------------

class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in, int out, Rng& rng) : in_(in), out_(out) {
    weight_.name = name + ".weight";
    weight_.init_size(static_cast<std::size_t>(in) * out);
    he_init(weight_, static_cast<std::size_t>(in), rng);
    bias_.name = name + ".bias";
    bias_.init_size(static_cast<std::size_t>(out));
  }

  void register_params(ParamRegistry& reg) {
    reg.add(&weight_);
    reg.add(&bias_);
  }

  // x: (B, in, 1, 1) -> (B, out, 1, 1)
  Tensor forward(Tensor x) {
    input_ = std::move(x);
    const Tensor& in_t = input_;
    Tensor out(in_t.n, out_, 1, 1);
    ConstMapMatF xm(in_t.data(), in_, in_t.n);
    ConstMapMatF wm(weight_.w.data(), out_, in_);
    MapMatF om(out.data(), out_, x.n);
    om.noalias() = wm * xm;
    for (int b = 0; b < in_t.n; ++b)
      for (int o = 0; o < out_; ++o) om(o, b) += bias_.w[static_cast<std::size_t>(o)];
    return out;
  }

  Tensor backward(const Tensor& dout) {
    ConstMapMatF dm(dout.data(), out_, dout.n);
    ConstMapMatF xm(input_.data(), in_, dout.n);
    MapMatF gw(weight_.g.data(), out_, in_);
    gw.noalias() += dm * xm.transpose();
    for (int o = 0; o < out_; ++o) {
      double s = 0.0;
      for (int b = 0; b < dout.n; ++b) s += dm(o, b);
      bias_.g[static_cast<std::size_t>(o)] += static_cast<float>(s);
    }
    Tensor dx(dout.n, in_, 1, 1);
    ConstMapMatF wm(weight_.w.data(), out_, in_);
    MapMatF dxm(dx.data(), in_, dout.n);
    dxm.noalias() = wm.transpose() * dm;
    input_ = Tensor();
    return dx;
  }

 private:
  int in_ = 0, out_ = 0;
  Param weight_, bias_;
  Tensor input_;
};

// ---------------------------------------------------------------------------
// Stateless shape ops.

inline Tensor global_avg_pool(const Tensor& x) {
  Tensor out(x.n, x.c, 1, 1);
  const std::size_t plane = x.plane();
  for (int b = 0; b < x.n; ++b) {
    for (int ch = 0; ch < x.c; ++ch) {
      const float* p = x.data() + (static_cast<std::size_t>(b) * x.c + ch) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.at(b, ch, 0, 0) = static_cast<float>(s / static_cast<double>(plane));
    }
  }
  return out;
}

inline Tensor global_avg_pool_backward(const Tensor& dout, int h, int w) {
  Tensor dx(dout.n, dout.c, h, w);
  const float inv = 1.0f / static_cast<float>(h * w);
  for (int b = 0; b < dout.n; ++b) {
    for (int ch = 0; ch < dout.c; ++ch) {
      const float g = dout.at(b, ch, 0, 0) * inv;
      float* p = dx.data() + (static_cast<std::size_t>(b) * dx.c + ch) * dx.plane();
      for (std::size_t i = 0; i < dx.plane(); ++i) p[i] = g;
    }
  }
  return dx;
}

inline Tensor upsample2x(const Tensor& x) {
  Tensor out(x.n, x.c, x.h * 2, x.w * 2);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < x.n; ++b) {
    for (int ch = 0; ch < x.c; ++ch) {
      for (int i = 0; i < x.h; ++i) {
        for (int j = 0; j < x.w; ++j) {
          const float v = x.at(b, ch, i, j);
          out.at(b, ch, 2 * i, 2 * j) = v;
          out.at(b, ch, 2 * i, 2 * j + 1) = v;
          out.at(b, ch, 2 * i + 1, 2 * j) = v;
          out.at(b, ch, 2 * i + 1, 2 * j + 1) = v;
        }
      }
    }
  }
  return out;
}

inline Tensor upsample2x_backward(const Tensor& dout) {
  Tensor dx(dout.n, dout.c, dout.h / 2, dout.w / 2);
#pragma omp parallel for schedule(static)
  for (int b = 0; b < dout.n; ++b) {
    for (int ch = 0; ch < dout.c; ++ch) {
      for (int i = 0; i < dx.h; ++i) {
        for (int j = 0; j < dx.w; ++j) {
          dx.at(b, ch, i, j) = dout.at(b, ch, 2 * i, 2 * j) + dout.at(b, ch, 2 * i, 2 * j + 1) +
                               dout.at(b, ch, 2 * i + 1, 2 * j) +
                               dout.at(b, ch, 2 * i + 1, 2 * j + 1);
        }
      }
    }
  }
  return dx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat_channels: shape mismatch");
  Tensor out(a.n, a.c + b.c, a.h, a.w);
  const std::size_t plane = a.plane();
  for (int s = 0; s < a.n; ++s) {
    std::copy_n(a.data() + s * a.sample_size(), a.sample_size(),
                out.data() + s * out.sample_size());
    std::copy_n(b.data() + s * b.sample_size(), b.sample_size(),
                out.data() + s * out.sample_size() + a.c * plane);
  }
  return out;
}

inline std::pair<Tensor, Tensor> split_channels(const Tensor& x, int c_first) {
  Tensor a(x.n, c_first, x.h, x.w);
  Tensor b(x.n, x.c - c_first, x.h, x.w);
  const std::size_t plane = x.plane();
  for (int s = 0; s < x.n; ++s) {
    std::copy_n(x.data() + s * x.sample_size(), a.sample_size(),
                a.data() + s * a.sample_size());
    std::copy_n(x.data() + s * x.sample_size() + c_first * plane, b.sample_size(),
                b.data() + s * b.sample_size());
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamRegistry& reg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param* p : reg.params) {
      for (std::size_t i = 0; i < p->w.size(); ++i) {
        const double g = p->g[i];
        const double m = beta1_ * p->adam_m[i] + (1.0 - beta1_) * g;
        const double v = beta2_ * p->adam_v[i] + (1.0 - beta2_) * g * g;
        p->adam_m[i] = static_cast<float>(m);
        p->adam_v[i] = static_cast<float>(v);
        p->w[i] -= static_cast<float>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

  void zero_grad(ParamRegistry& reg) {
    for (Param* p : reg.params) std::fill(p->g.begin(), p->g.end(), 0.0f);
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace shapeseg
