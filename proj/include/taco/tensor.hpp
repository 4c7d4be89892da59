#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "taco/common.hpp"

namespace taco {

// Dense row-major double tensor with shared storage. Copies are shallow;
// clone() deep-copies. All ops in this project produce fresh contiguous
// tensors, so strides are never needed.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, double v);
  static Tensor ones(std::vector<std::int64_t> shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor from_vector(std::vector<double> v);

  bool defined() const { return data_ != nullptr; }
  std::int64_t size() const { return size_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(int i) const;

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }

  double& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  double& at(std::initializer_list<std::int64_t> idx);
  double at(std::initializer_list<std::int64_t> idx) const;

  Tensor clone() const;
  // Same storage, new shape (element count must match).
  Tensor reshaped(std::vector<std::int64_t> shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  void fill(double v);

 private:
  std::int64_t offset_of(std::initializer_list<std::int64_t> idx) const;

  std::vector<std::int64_t> shape_;
  std::int64_t size_ = 0;
  std::shared_ptr<std::vector<double>> data_;
};

std::string shape_to_string(const std::vector<std::int64_t>& shape);

}  // namespace taco
