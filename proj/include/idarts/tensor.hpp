#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "idarts/common.hpp"
#include "idarts/rng.hpp"

namespace idarts {

// Dense row-major tensor of doubles. All training and evaluation runs in
// 64-bit precision; single-threaded kernels keep results bitwise reproducible
// for a fixed binary and seed.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(compute_numel(shape_), fill) {}

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    return Tensor(std::move(shape), v);
  }

  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = stddev * rng.normal();
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    if (compute_numel(shape) != values.size()) {
      throw ArgumentError("Tensor::from: shape does not match value count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  // this += a * x
  void axpy(double a, const Tensor& x) {
    if (!same_shape(x)) throw ArgumentError("axpy: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
  }

  void scale(double a) {
    for (auto& v : data_) v *= a;
  }

  double dot(const Tensor& o) const {
    if (!same_shape(o)) throw ArgumentError("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) s += data_[i] * o.data_[i];
    return s;
  }

  double linf_norm() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  std::uint64_t checksum() const { return checksum_doubles(data_); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

 private:
  static std::size_t compute_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.axpy(1.0, b);
  return out;
}

}  // namespace idarts
