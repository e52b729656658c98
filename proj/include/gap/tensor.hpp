#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace gap {

// Dense row-major tensor of doubles. Deliberately minimal: the heavy lifting
// happens in gap::kernels on raw pointers, and Eigen maps over data() where
// matrix algebra is needed.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    v_.assign(count(shape_), 0.0);
  }

  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  const std::vector<std::size_t>& shape() const { return shape_; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double& at(std::size_t i) { return v_[i]; }
  double at(std::size_t i) const { return v_[i]; }

  double& at(std::size_t i, std::size_t j) {
    assert(ndim() == 2);
    return v_[i * shape_[1] + j];
  }
  double at(std::size_t i, std::size_t j) const {
    assert(ndim() == 2);
    return v_[i * shape_[1] + j];
  }

  double& at(std::size_t i, std::size_t j, std::size_t k) {
    assert(ndim() == 3);
    return v_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    assert(ndim() == 3);
    return v_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    assert(ndim() == 4);
    return v_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    assert(ndim() == 4);
    return v_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(double v) { std::fill(v_.begin(), v_.end(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> v_;
};

}  // namespace gap
