// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace vsd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Row-major strides; the last axis is contiguous.
inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

namespace detail {

// Allocator whose plain construct() default-initializes, so vector::resize
// leaves trivial element storage untouched. Everything else matches
// std::allocator, including zero-fill on (count, value) construction.
template <typename T>
struct NoInitAllocator : std::allocator<T> {
  using std::allocator<T>::allocator;
  template <typename U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    std::construct_at(p, std::forward<Args>(args)...);
  }
};

}  // namespace detail

template <typename T>
using TensorVec = std::vector<T, detail::NoInitAllocator<T>>;

// Dense row-major tensor. Purely a value container: all math lives in the
// graph ops and the kernels under detail/. Copy semantics are deep.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), T{0}) {}

  Tensor(Shape shape, TensorVec<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_size();
  }

  Tensor(Shape shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  Tensor(Shape shape, std::initializer_list<T> data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = uninitialized(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T{1}); }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  // Element storage is left unwritten; only callers that overwrite every
  // element may use this.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(numel(t.shape_));
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  TensorVec<T>& vec() { return data_; }
  const TensorVec<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out = Tensor<U>::uninitialized(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

 private:
  void check_size() const {
    if (data_.size() != numel(shape_)) {
      throw std::invalid_argument("tensor: data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  TensorVec<T> data_;
};

}  // namespace vsd
