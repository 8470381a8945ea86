#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cbt/errors.hpp"

namespace cbt {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor. Image batches use [N, C, H, W].
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                           shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at4(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.vec().begin(), t.vec().end(), [](const T& v) { return std::isfinite(static_cast<double>(v)); });
}

// One sample of an [N, ...] batch, keeping a leading dimension of 1.
template <class T>
Tensor<T> batch_slice(const Tensor<T>& t, int n) {
  const std::size_t per = t.size() / static_cast<std::size_t>(t.dim(0));
  Shape s = t.shape();
  s[0] = 1;
  std::vector<T> out(t.data() + per * n, t.data() + per * (n + 1));
  return Tensor<T>(std::move(s), std::move(out));
}

// Stacks same-shaped [1, ...] or [...] tensors along a new (or existing unit) leading axis.
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw DimensionError("cannot stack an empty list");
  Shape inner = items[0].shape();
  if (!inner.empty() && inner[0] == 1 && inner.size() == 4) inner.erase(inner.begin());
  Shape out_shape = inner;
  out_shape.insert(out_shape.begin(), static_cast<int>(items.size()));
  std::vector<T> data;
  data.reserve(shape_numel(out_shape));
  for (const auto& it : items) {
    if (it.size() != shape_numel(inner)) throw DimensionError("stack: mismatched item shape " + shape_str(it.shape()));
    data.insert(data.end(), it.vec().begin(), it.vec().end());
  }
  return Tensor<T>(std::move(out_shape), std::move(data));
}

}  // namespace cbt
