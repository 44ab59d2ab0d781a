#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fsdrive/error.hpp"

namespace fsdrive {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major array. Images use (batch, channel, height, width).
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    for (auto extent : shape_) require(extent > 0, "tensor extents must be positive, got " + to_string(shape_));
    values_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    for (auto extent : shape_) require(extent > 0, "tensor extents must be positive, got " + to_string(shape_));
    if (values_.size() != shape_size(shape_))
      fail(ErrorKind::shape_mismatch, "tensor of shape " + to_string(shape_) + " given " +
                                          std::to_string(values_.size()) + " values");
  }

  Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), std::vector<T>(values)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() & noexcept { return values_; }
  std::span<const T> values() const& noexcept { return values_; }
  std::span<const T> values() && = delete;  // would dangle
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

  /// Same values, new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      fail(ErrorKind::shape_mismatch, "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return Tensor(std::move(shape), values_);
  }

  /// Index of the first non-finite value, if any.
  std::optional<std::size_t> first_non_finite() const {
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(static_cast<double>(values_[i]))) return i;
    return std::nullopt;
  }

  bool all_finite() const { return !first_non_finite().has_value(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

private:
  Shape shape_;
  std::vector<T> values_;
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

}  // namespace fsdrive
