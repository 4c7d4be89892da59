#include "taco/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace taco {

namespace {
std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    TACO_CHECK(d >= 0, ShapeError, "negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}
}  // namespace

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), size_(element_count(shape_)) {
  data_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(size_), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), size_(element_count(shape_)) {
  TACO_CHECK(static_cast<std::int64_t>(values.size()) == size_, ShapeError,
             "value count " + std::to_string(values.size()) + " does not match shape " +
                 shape_to_string(shape_));
  data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from_vector(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor({n}, std::move(v));
}

std::int64_t Tensor::dim(int i) const {
  if (i < 0) i += rank();
  TACO_CHECK(i >= 0 && i < rank(), ShapeError,
             "dim index " + std::to_string(i) + " out of range for " + shape_str());
  return shape_[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::offset_of(std::initializer_list<std::int64_t> idx) const {
  TACO_CHECK(static_cast<int>(idx.size()) == rank(), ShapeError,
             "index rank mismatch for " + shape_str());
  std::int64_t off = 0;
  int i = 0;
  for (std::int64_t v : idx) {
    off = off * shape_[static_cast<std::size_t>(i)] + v;
    ++i;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) { return (*data_)[static_cast<std::size_t>(offset_of(idx))]; }
double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return (*data_)[static_cast<std::size_t>(offset_of(idx))];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.size_ = size_;
  t.data_ = data_ ? std::make_shared<std::vector<double>>(*data_) : nullptr;
  return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
  TACO_CHECK(element_count(shape) == size_, ShapeError,
             "reshape " + shape_str() + " -> " + shape_to_string(shape) + " changes element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.size_ = size_;
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  const double* p = data();
  for (std::int64_t i = 0; i < size_; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

void Tensor::fill(double v) {
  if (data_) std::fill(data_->begin(), data_->end(), v);
}

}  // namespace taco
