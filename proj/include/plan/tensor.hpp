#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace plan {

// Storage dtype. All in-memory math is f64; f32 exists as an on-disk
// storage format and survives round-trips bit-exactly.
enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

// Dense row-major tensor, rank 0..4. Rank 0 is an in-memory scalar;
// the file format only accepts rank 1..4.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static Tensor scalar(double v) {
    Tensor t;
    t.data_.assign(1, v);
    return t;
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t;
    if (count(shape) != data.size())
      throw std::invalid_argument("tensor: shape/data size mismatch");
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2D helpers
  std::size_t rows() const { return rank() >= 1 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape_[1] : 1; }

  Dtype dtype() const { return dtype_; }
  void set_dtype(Dtype d) { dtype_ = d; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  // Copy of row i of a rank-2 tensor as a rank-1 tensor.
  Tensor row(std::size_t i) const {
    Tensor r({shape_[1]});
    for (std::size_t j = 0; j < shape_[1]; ++j) r[j] = (*this)(i, j);
    return r;
  }

  // Copy of slice [i, :, :] of a rank-3 tensor as a rank-2 tensor.
  Tensor slice(std::size_t i) const {
    Tensor s({shape_[1], shape_[2]});
    const std::size_t n = shape_[1] * shape_[2];
    const double* src = data_.data() + i * n;
    for (std::size_t k = 0; k < n; ++k) s[k] = src[k];
    return s;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  Dtype dtype_ = Dtype::f64;
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

}  // namespace plan
