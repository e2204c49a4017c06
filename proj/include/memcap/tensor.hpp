#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <experimental/simd>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "memcap/error.hpp"

namespace memcap {

/// Dot product with eight interleaved partial sums. The summation order is
/// fixed, so results are reproducible, and it maps onto SIMD registers.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) noexcept {
  using V = std::experimental::fixed_size_simd<T, 8>;
  V acc = 0;
  const std::size_t m = n & ~std::size_t{7};
  for (std::size_t i = 0; i < m; i += 8)
    acc += V(a + i, std::experimental::element_aligned) * V(b + i, std::experimental::element_aligned);
  T tail = 0;
  for (std::size_t i = m; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  return os.str();
}

/// Dense row-major n-dimensional array.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
  }

  /// 2-D convenience constructor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Tensor t({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeMismatch("ragged matrix literal");
      for (const auto& v : row) t.data_[i++] = v;
    }
    return t;
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<T> span() noexcept { return data_; }
  [[nodiscard]] std::span<const T> span() const noexcept { return data_; }
  [[nodiscard]] T* data() noexcept { return data_.data(); }
  [[nodiscard]] const T* data() const noexcept { return data_.data(); }
  [[nodiscard]] std::vector<T>& vec() noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * shape_[1] + j];
  }

  /// Rows [first, first+count) along axis 0.
  [[nodiscard]] Tensor slice_rows(std::size_t first, std::size_t count) const {
    const std::size_t stride = shape_.empty() ? 0 : size() / shape_[0];
    Shape s = shape_;
    s[0] = count;
    return Tensor(std::move(s), std::vector<T>(data_.begin() + first * stride,
                                               data_.begin() + (first + count) * stride));
  }

  void reshape(Shape s) {
    if (shape_size(s) != size())
      throw ShapeMismatch("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
    shape_ = std::move(s);
  }

  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Throws NonFinite naming `where` if any element is NaN or Inf.
  void require_finite(const std::string& where) const {
    if (!all_finite()) throw NonFinite(where + ": non-finite value");
  }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace memcap
