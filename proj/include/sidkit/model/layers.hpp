#pragma once

#include <string>
#include <vector>

#include "sidkit/core/rng.hpp"
#include "sidkit/core/tensor.hpp"

namespace sidkit {

// Learnable tensor plus its gradient accumulator.
struct Param {
  Tensor value;
  Tensor grad;

  void resize(std::vector<int> shape) {
    value = Tensor(shape);
    grad = Tensor(shape);
  }
};

// Registry entry used by the optimizer and the checkpoint writer.
struct NamedParam {
  std::string name;
  Param* param;
};
// Non-learnable state that still must persist (BN running stats).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

// All layers follow the same pattern: forward() caches whatever backward()
// needs, backward() accumulates into param grads and returns the input
// gradient. One forward per backward, as in a classic layer library.

// 3x3 convolution, padding 1, no bias (a BN always follows). im2col + GEMM.
class Conv3x3 {
 public:
  Conv3x3(int in_ch, int out_ch, int stride);
  void init(RngStream& rng);  // He-normal, fan_in = in_ch * 9
  Tensor forward(const Tensor& x);  // x: [N, in, H, W] -> [N, out, H', W']
  Tensor backward(const Tensor& dy);

  int out_height(int h) const { return (h + 2 * 1 - 3) / stride_ + 1; }
  int out_width(int w) const { return out_height(w); }

  Param w;  // [out_ch, in_ch * 9]

 private:
  int in_ch_, out_ch_, stride_;
  std::vector<int> x_shape_;
  Tensor cols_;  // [N, in_ch*9, H'*W'] cached for the weight gradient
};

// Per-channel batch normalization over [N, C, H, W] (spatial = true) or
// [N, C] (spatial = false).
class BatchNorm {
 public:
  BatchNorm(int channels, bool spatial, double eps = 1e-5, double momentum = 0.1);
  void init();  // gamma = 1, beta = 0, running stats = (0, 1)
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);

  Param gamma, beta;            // [C]
  Tensor running_mean, running_var;  // [C]

 private:
  int channels_;
  bool spatial_;
  double eps_, momentum_;
  bool train_cached_ = false;
  Tensor xhat_;    // cached normalized input
  Tensor invstd_;  // [C], cached 1/sqrt(var+eps) used in forward
  std::vector<int> x_shape_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  Tensor y_;  // forward output mask source
};

// y = x W^T (+ bias). x: [B, in] -> [B, out].
class Linear {
 public:
  Linear(int in_dim, int out_dim, bool bias);
  void init(RngStream& rng);  // He-normal, fan_in = in_dim; bias = 0
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  Param w;  // [out, in]
  Param b;  // [out] when has_bias
  bool has_bias() const { return bias_; }

 private:
  int in_, out_;
  bool bias_;
  Tensor x_;  // cached input
};

// Mean over all spatial positions: [N, C, H, W] -> [N, C].
class GlobalAvgPool {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<int> x_shape_;
};

// Mean over rows [row0, row1) and all columns: [N, C, H, W] -> [N, C].
class BandAvgPool {
 public:
  Tensor forward(const Tensor& x, int row0, int row1);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<int> x_shape_;
  int row0_ = 0, row1_ = 0;
};

// Parameter-free vertical re-alignment. Per sample:
//   heat(h, w)  = l2 norm of the feature column at (h, w)
//   row_score h = max over w of heat(h, w)
//   [t, b]      = first/last row with row_score > sigma (full map if none)
// rows [t, b] are resized back to H rows by bilinear interpolation. The
// bounds act as constants in backward: gradients flow only through the
// interpolation weights.
struct AlignmentInfo {
  int t = 0, b = 0;
  std::vector<double> row_score;  // [H]
};

class AlignCrop {
 public:
  explicit AlignCrop(double sigma) : sigma_(sigma) {}
  Tensor forward(const Tensor& x);  // [N, C, H, W] -> same shape
  Tensor backward(const Tensor& dy);

  const std::vector<AlignmentInfo>& info() const { return info_; }  // last batch

 private:
  double sigma_;
  std::vector<int> x_shape_;
  std::vector<AlignmentInfo> info_;
  // per sample, per output row: source rows and weights
  struct RowMix {
    int r0, r1;
    double w0, w1;
  };
  std::vector<std::vector<RowMix>> mix_;
};

}  // namespace sidkit
