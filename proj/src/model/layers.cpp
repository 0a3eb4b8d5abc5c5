#include "sidkit/model/layers.hpp"

#include <algorithm>
#include <cmath>

#include "sidkit/kernels.hpp"
#include "sidkit/schema.hpp"  // sidkit::Error

namespace sidkit {

namespace k = sidkit::kernels;

// ---------------------------------------------------------------------------
// Conv3x3

Conv3x3::Conv3x3(int in_ch, int out_ch, int stride)
    : in_ch_(in_ch), out_ch_(out_ch), stride_(stride) {
  w.resize({out_ch, in_ch * 9});
}

void Conv3x3::init(RngStream& rng) {
  const double std = std::sqrt(2.0 / (in_ch_ * 9));
  for (auto& v : w.value.vec()) v = rng.normal(0.0, std);
  w.grad.zero();
}

namespace {

void im2col(const Tensor& x, int n, int stride, double* col, int oh_count, int ow_count) {
  const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int spatial = oh_count * ow_count;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col + static_cast<size_t>(c * 9 + ky * 3 + kx) * spatial;
        for (int oh = 0; oh < oh_count; ++oh) {
          const int ih = oh * stride + ky - 1;
          for (int ow = 0; ow < ow_count; ++ow) {
            const int iw = ow * stride + kx - 1;
            row[oh * ow_count + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                          ? x.at(n, c, ih, iw)
                                          : 0.0;
          }
        }
      }
}

void col2im_accum(const double* col, int n, int stride, Tensor& dx, int oh_count, int ow_count) {
  const int C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const int spatial = oh_count * ow_count;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col + static_cast<size_t>(c * 9 + ky * 3 + kx) * spatial;
        for (int oh = 0; oh < oh_count; ++oh) {
          const int ih = oh * stride + ky - 1;
          if (ih < 0 || ih >= H) continue;
          for (int ow = 0; ow < ow_count; ++ow) {
            const int iw = ow * stride + kx - 1;
            if (iw >= 0 && iw < W) dx.at(n, c, ih, iw) += row[oh * ow_count + ow];
          }
        }
      }
}

}  // namespace

Tensor Conv3x3::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != in_ch_) throw Error("conv input shape mismatch");
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int oh = out_height(H), ow = out_width(W);
  const int spatial = oh * ow;
  x_shape_ = x.shape();
  cols_ = Tensor({N, in_ch_ * 9, spatial});

  Tensor y({N, out_ch_, oh, ow});
  for (int n = 0; n < N; ++n) {
    double* col = cols_.data() + static_cast<size_t>(n) * in_ch_ * 9 * spatial;
    im2col(x, n, stride_, col, oh, ow);
    k::gemm_nn(out_ch_, spatial, in_ch_ * 9, 1.0, w.value.data(), in_ch_ * 9, col, spatial,
               0.0, y.data() + static_cast<size_t>(n) * out_ch_ * spatial, spatial);
  }
  return y;
}

Tensor Conv3x3::backward(const Tensor& dy) {
  const int N = x_shape_[0], H = x_shape_[2], W = x_shape_[3];
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int spatial = oh * ow;
  Tensor dx({N, in_ch_, H, W});
  Tensor dcol({in_ch_ * 9, spatial});
  for (int n = 0; n < N; ++n) {
    const double* col = cols_.data() + static_cast<size_t>(n) * in_ch_ * 9 * spatial;
    const double* dyn = dy.data() + static_cast<size_t>(n) * out_ch_ * spatial;
    // dW += dy_n * col^T
    k::gemm_nt(out_ch_, in_ch_ * 9, spatial, 1.0, dyn, spatial, col, spatial, 1.0,
               w.grad.data(), in_ch_ * 9);
    // dcol = W^T * dy_n
    k::gemm_tn(in_ch_ * 9, spatial, out_ch_, 1.0, w.value.data(), in_ch_ * 9, dyn, spatial,
               0.0, dcol.data(), spatial);
    col2im_accum(dcol.data(), n, stride_, dx, oh, ow);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(int channels, bool spatial, double eps, double momentum)
    : channels_(channels), spatial_(spatial), eps_(eps), momentum_(momentum) {
  gamma.resize({channels});
  beta.resize({channels});
  running_mean = Tensor({channels});
  running_var = Tensor({channels});
  init();
}

void BatchNorm::init() {
  gamma.value.fill(1.0);
  gamma.grad.zero();
  beta.value.fill(0.0);
  beta.grad.zero();
  running_mean.fill(0.0);
  running_var.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  const int C = channels_;
  if ((spatial_ && (x.ndim() != 4 || x.dim(1) != C)) ||
      (!spatial_ && (x.ndim() != 2 || x.dim(1) != C)))
    throw Error("batchnorm input shape mismatch");
  x_shape_ = x.shape();
  train_cached_ = train;
  const int N = x.dim(0);
  const int HW = spatial_ ? x.dim(2) * x.dim(3) : 1;
  const long M = static_cast<long>(N) * HW;

  xhat_ = Tensor(x.shape());
  invstd_ = Tensor({C});
  Tensor y(x.shape());

  for (int c = 0; c < C; ++c) {
    double mean, var;
    if (train) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* px = x.data() + (static_cast<size_t>(n) * C + c) * HW;
        s += k::sum(HW, px);
        s2 += k::sumsq(HW, px);
      }
      mean = s / static_cast<double>(M);
      var = s2 / static_cast<double>(M) - mean * mean;
      if (var < 0.0) var = 0.0;  // guard tiny negative from cancellation
      const double unbiased = M > 1 ? var * static_cast<double>(M) / (M - 1) : var;
      running_mean[static_cast<size_t>(c)] =
          (1.0 - momentum_) * running_mean[static_cast<size_t>(c)] + momentum_ * mean;
      running_var[static_cast<size_t>(c)] =
          (1.0 - momentum_) * running_var[static_cast<size_t>(c)] + momentum_ * unbiased;
    } else {
      mean = running_mean[static_cast<size_t>(c)];
      var = running_var[static_cast<size_t>(c)];
    }
    const double istd = 1.0 / std::sqrt(var + eps_);
    invstd_[static_cast<size_t>(c)] = istd;
    const double g = gamma.value[static_cast<size_t>(c)];
    const double bt = beta.value[static_cast<size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const double* px = x.data() + (static_cast<size_t>(n) * C + c) * HW;
      double* ph = xhat_.data() + (static_cast<size_t>(n) * C + c) * HW;
      double* py = y.data() + (static_cast<size_t>(n) * C + c) * HW;
      k::affine(HW, istd, -mean * istd, px, ph);  // xhat = (x - mean) * istd
      k::affine(HW, g, bt, ph, py);               // y = gamma * xhat + beta
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const int C = channels_;
  const int N = x_shape_[0];
  const int HW = spatial_ ? x_shape_[2] * x_shape_[3] : 1;
  const double M = static_cast<double>(static_cast<long>(N) * HW);
  Tensor dx(dy.shape());

  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* pdy = dy.data() + (static_cast<size_t>(n) * C + c) * HW;
      const double* ph = xhat_.data() + (static_cast<size_t>(n) * C + c) * HW;
      sum_dy += k::sum(HW, pdy);
      sum_dy_xhat += k::dot(HW, pdy, ph);
    }
    gamma.grad[static_cast<size_t>(c)] += sum_dy_xhat;
    beta.grad[static_cast<size_t>(c)] += sum_dy;

    const double g = gamma.value[static_cast<size_t>(c)];
    const double istd = invstd_[static_cast<size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const double* pdy = dy.data() + (static_cast<size_t>(n) * C + c) * HW;
      const double* ph = xhat_.data() + (static_cast<size_t>(n) * C + c) * HW;
      double* pdx = dx.data() + (static_cast<size_t>(n) * C + c) * HW;
      if (train_cached_) {
        // dx = g*istd * (dy - sum_dy/M - xhat * sum_dy_xhat/M)
        for (int i = 0; i < HW; ++i)
          pdx[i] = g * istd * (pdy[i] - sum_dy / M - ph[i] * (sum_dy_xhat / M));
      } else {
        k::affine(HW, g * istd, 0.0, pdy, pdx);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x) {
  y_ = Tensor(x.shape());
  k::relu_fwd(static_cast<int>(x.numel()), x.data(), y_.data());
  return y_;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  k::relu_bwd(static_cast<int>(dy.numel()), y_.data(), dy.data(), dx.data());
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in_dim, int out_dim, bool bias) : in_(in_dim), out_(out_dim), bias_(bias) {
  w.resize({out_dim, in_dim});
  if (bias_) b.resize({out_dim});
}

void Linear::init(RngStream& rng) {
  const double std = std::sqrt(2.0 / in_);
  for (auto& v : w.value.vec()) v = rng.normal(0.0, std);
  w.grad.zero();
  if (bias_) {
    b.value.zero();
    b.grad.zero();
  }
}

Tensor Linear::forward(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(1) != in_) throw Error("linear input shape mismatch");
  x_ = x;
  const int B = x.dim(0);
  Tensor y({B, out_});
  k::gemm_nt(B, out_, in_, 1.0, x.data(), in_, w.value.data(), in_, 0.0, y.data(), out_);
  if (bias_)
    for (int n = 0; n < B; ++n)
      k::axpy(out_, 1.0, b.value.data(), y.data() + static_cast<size_t>(n) * out_);
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int B = x_.dim(0);
  // dW += dy^T x
  k::gemm_tn(out_, in_, B, 1.0, dy.data(), out_, x_.data(), in_, 1.0, w.grad.data(), in_);
  if (bias_)
    for (int n = 0; n < B; ++n)
      k::axpy(out_, 1.0, dy.data() + static_cast<size_t>(n) * out_, b.grad.data());
  Tensor dx({B, in_});
  k::gemm_nn(B, in_, out_, 1.0, dy.data(), out_, w.value.data(), in_, 0.0, dx.data(), in_);
  return dx;
}

// ---------------------------------------------------------------------------
// pooling

Tensor GlobalAvgPool::forward(const Tensor& x) {
  x_shape_ = x.shape();
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      y.at(n, c) = k::sum(HW, x.data() + (static_cast<size_t>(n) * C + c) * HW) / HW;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  const int N = x_shape_[0], C = x_shape_[1], H = x_shape_[2], W = x_shape_[3];
  const int HW = H * W;
  Tensor dx({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double g = dy.at(n, c) / HW;
      double* p = dx.data() + (static_cast<size_t>(n) * C + c) * HW;
      for (int i = 0; i < HW; ++i) p[i] = g;
    }
  return dx;
}

Tensor BandAvgPool::forward(const Tensor& x, int row0, int row1) {
  if (row0 < 0 || row1 > x.dim(2) || row0 >= row1) throw Error("band rows out of range");
  x_shape_ = x.shape();
  row0_ = row0;
  row1_ = row1;
  const int N = x.dim(0), C = x.dim(1), W = x.dim(3);
  const int count = (row1 - row0) * W;
  Tensor y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* base = x.data() +
                           ((static_cast<size_t>(n) * C + c) * x.dim(2) + row0) * W;
      y.at(n, c) = k::sum(count, base) / count;  // rows are contiguous
    }
  return y;
}

Tensor BandAvgPool::backward(const Tensor& dy) {
  const int N = x_shape_[0], C = x_shape_[1], H = x_shape_[2], W = x_shape_[3];
  const int count = (row1_ - row0_) * W;
  Tensor dx({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double g = dy.at(n, c) / count;
      double* base = dx.data() + ((static_cast<size_t>(n) * C + c) * H + row0_) * W;
      for (int i = 0; i < count; ++i) base[i] = g;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// AlignCrop

Tensor AlignCrop::forward(const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  x_shape_ = x.shape();
  info_.assign(static_cast<size_t>(N), {});
  mix_.assign(static_cast<size_t>(N), {});
  Tensor y(x.shape());

  for (int n = 0; n < N; ++n) {
    auto& info = info_[static_cast<size_t>(n)];
    info.row_score.assign(static_cast<size_t>(H), 0.0);
    for (int h = 0; h < H; ++h) {
      double best = 0.0;
      for (int w = 0; w < W; ++w) {
        double sq = 0.0;
        for (int c = 0; c < C; ++c) {
          const double v = x.at(n, c, h, w);
          sq += v * v;
        }
        best = std::max(best, std::sqrt(sq));
      }
      info.row_score[static_cast<size_t>(h)] = best;
    }
    int t = -1, b = -1;
    for (int h = 0; h < H; ++h)
      if (info.row_score[static_cast<size_t>(h)] > sigma_) {
        if (t < 0) t = h;
        b = h;
      }
    if (t < 0) {  // nothing above threshold: keep the full map
      t = 0;
      b = H - 1;
    }
    info.t = t;
    info.b = b;

    auto& mix = mix_[static_cast<size_t>(n)];
    mix.resize(static_cast<size_t>(H));
    const double span = static_cast<double>(b - t + 1);
    for (int r = 0; r < H; ++r) {
      double src = (r + 0.5) * span / H - 0.5 + t;
      src = std::clamp(src, static_cast<double>(t), static_cast<double>(b));
      int r0 = static_cast<int>(std::floor(src));
      r0 = std::min(r0, b);
      const int r1 = std::min(r0 + 1, b);
      const double w1 = src - r0;
      mix[static_cast<size_t>(r)] = {r0, r1, 1.0 - w1, w1};
    }
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < H; ++r) {
        const auto& m = mix[static_cast<size_t>(r)];
        const double* row0 = x.data() + ((static_cast<size_t>(n) * C + c) * H + m.r0) * W;
        const double* row1 = x.data() + ((static_cast<size_t>(n) * C + c) * H + m.r1) * W;
        double* out = y.data() + ((static_cast<size_t>(n) * C + c) * H + r) * W;
        for (int w = 0; w < W; ++w) out[w] = m.w0 * row0[w] + m.w1 * row1[w];
      }
  }
  return y;
}

Tensor AlignCrop::backward(const Tensor& dy) {
  const int N = x_shape_[0], C = x_shape_[1], H = x_shape_[2], W = x_shape_[3];
  Tensor dx({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    const auto& mix = mix_[static_cast<size_t>(n)];
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < H; ++r) {
        const auto& m = mix[static_cast<size_t>(r)];
        const double* g = dy.data() + ((static_cast<size_t>(n) * C + c) * H + r) * W;
        double* row0 = dx.data() + ((static_cast<size_t>(n) * C + c) * H + m.r0) * W;
        double* row1 = dx.data() + ((static_cast<size_t>(n) * C + c) * H + m.r1) * W;
        k::axpy(W, m.w0, g, row0);
        k::axpy(W, m.w1, g, row1);
      }
  }
  return dx;
}

}  // namespace sidkit
