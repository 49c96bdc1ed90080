#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace ctmr {

/// NCHW extents. Scalars are 1x1x1x1.
struct Shape {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape &, const Shape &) = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

template <typename T> class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {}
  Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
    require(data_.size() == shape_.size(), "tensor data does not match shape " + shape_.str());
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, v); }

  const Shape &shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T> &storage() { return data_; }
  const std::vector<T> &storage() const { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  T &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  /// Pointer to the (n, c) plane.
  T *plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T *plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  T item() const {
    require(data_.size() == 1, "item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor &operator+=(const Tensor &o) {
    require(shape_ == o.shape_, "shape mismatch in += : " + shape_.str() + " vs " + o.shape_.str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U> Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  /// Copy of sample n as a 1xCxHxW tensor.
  Tensor sample(std::size_t n) const {
    Shape s = shape_;
    s.n = 1;
    Tensor out(s);
    std::copy_n(data_.data() + n * s.size(), s.size(), out.data());
    return out;
  }

  friend bool operator==(const Tensor &, const Tensor &) = default;

private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Stacks 1xCxHxW tensors along the batch axis.
template <typename T> Tensor<T> stack(std::span<const Tensor<T>> items) {
  require(!items.empty(), "stack of zero tensors");
  Shape s = items.front().shape();
  s.n = 0;
  for (const auto &t : items) {
    require(t.shape().c == items.front().shape().c && t.shape().h == items.front().shape().h &&
                t.shape().w == items.front().shape().w,
            "stack shape mismatch");
    s.n += t.shape().n;
  }
  Tensor<T> out(s);
  std::size_t off = 0;
  for (const auto &t : items) {
    std::copy_n(t.data(), t.size(), out.data() + off);
    off += t.size();
  }
  return out;
}

} // namespace ctmr
