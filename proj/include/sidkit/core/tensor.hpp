#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace sidkit {

// Dense row-major double tensor. Shape is a plain vector of extents; data is
// flat. All layers operate on these, with layout conventions documented at
// the op that imposes them (images are N x C x H x W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      assert(d >= 0);
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // 2-d / 3-d / 4-d indexed access (row-major)
  double& at(int i, int j) {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }
  double at(int i, int j) const {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }
  double& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double& at(int n, int c, int h, int w) {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int n, int c, int h, int w) const {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(double v) { data_.assign(data_.size(), v); }
  void zero() { fill(0.0); }

  // Reinterpret the flat buffer under a new shape with equal element count.
  void reshape(std::vector<int> shape) {
    assert(numel_of(shape) == data_.size());
    shape_ = std::move(shape);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace sidkit
