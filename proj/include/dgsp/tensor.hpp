#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dgsp/common.hpp"

namespace dgsp {

using Shape = std::vector<long>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Dense row-major tensor with value semantics. The last axis is contiguous.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long>(data_.size()) != shape_numel(shape_))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  long dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long numel() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  // Flat index helpers for the common layouts.
  long idx2(long i, long j) const { return i * shape_[1] + j; }
  long idx3(long i, long j, long k) const { return (i * shape_[1] + j) * shape_[2] + k; }
  long idx4(long n, long c, long h, long w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  T& at2(long i, long j) { return data_[idx2(i, j)]; }
  const T& at2(long i, long j) const { return data_[idx2(i, j)]; }
  T& at3(long i, long j, long k) { return data_[idx3(i, j, k)]; }
  const T& at3(long i, long j, long k) const { return data_[idx3(i, j, k)]; }
  T& at4(long n, long c, long h, long w) { return data_[idx4(n, c, h, w)]; }
  const T& at4(long n, long c, long h, long w) const { return data_[idx4(n, c, h, w)]; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (long i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace dgsp
