#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scrl/errors.hpp"

namespace scrl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array. The gradient buffer exists iff requires_grad() and
// always mirrors the data shape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {
    validate_shape();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... I>
  T& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  const T& operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) {
      grad_.assign(data_.size(), T{0});
    } else {
      grad_.clear();
      grad_.shrink_to_fit();
    }
  }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }

  // Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                       shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(idx.size()) +
                       " does not match tensor rank " +
                       std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) off = off * shape_[axis++] + i;
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::vector<T> grad_;
};

}  // namespace scrl
