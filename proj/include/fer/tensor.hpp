#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fer/error.hpp"
#include "fer/kernels.hpp"

namespace fer {

using Extents = std::vector<std::size_t>;

inline std::size_t extent_product(const Extents& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Extents& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major N-d array. Rank 0 (empty shape) holds a single scalar.
/// 4-d tensors are NCHW.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Extents shape, T fill = T{}) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(extent_product(shape_), fill);
  }

  Tensor(Extents shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_extents();
    if (extent_product(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " holds " +
                       std::to_string(extent_product(shape_)) + " elements but " +
                       std::to_string(data_.size()) + " values were given");
    }
  }

  const Extents& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  Extents strides() const {
    Extents s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index of rank " + std::to_string(index.size()) + " into tensor of shape " +
                       shape_string(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= shape_[i]) {
        throw ShapeError("index " + std::to_string(index[i]) + " out of range on axis " +
                         std::to_string(i) + " of " + shape_string(shape_));
      }
      flat = flat * shape_[i] + index[i];
    }
    return flat;
  }

  template <typename... I>
  T& operator()(I... idx) {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[offset(index)];
  }

  template <typename... I>
  const T& operator()(I... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[offset(index)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Extents shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Extents shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }

  void reshape(Extents shape) {
    if (extent_product(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    check_extents();
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  Extents shape_;
  std::vector<T> data_ = std::vector<T>(1, T{});
};

template <typename T>
Tensor<T> tensor_from(Extents shape, std::span<const T> values) {
  return Tensor<T>(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

template <typename T>
Tensor<T> tensor_from(Extents shape, std::initializer_list<T> values) {
  return Tensor<T>(std::move(shape), std::vector<T>(values));
}

/// Batch geometry of an NCHW tensor.
struct Shape4 {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t plane() const noexcept { return h * w; }
  std::size_t image() const noexcept { return c * h * w; }
  Extents extents() const { return {n, c, h, w}; }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

template <typename T>
Shape4 shape4(const Tensor<T>& t, std::string_view what = "tensor") {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " must be NCHW, got shape " + shape_string(t.shape()));
  }
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

/// Throws when any value is NaN or infinite. Used by the debug finite-check mode.
template <typename T>
void check_finite(const Tensor<T>& t, std::string_view where) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw TrainingError("non-finite value at flat index " + std::to_string(i) + " in " +
                          std::string(where));
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor<T> c({a.dim(0), b.dim(1)});
  kernels::gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.raw(), b.raw(), c.raw(), false);
  return c;
}

enum class Reduction { sum, mean };

namespace detail {

inline void check_axis(const Extents& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("reduction axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape));
  }
}

// (outer, axis, inner) factorisation of a row-major shape around `axis`.
inline std::array<std::size_t, 3> split_axis(const Extents& shape, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

}  // namespace detail

/// Sum or mean along one axis; the result drops that axis. Summation runs in
/// increasing index order.
template <typename T>
Tensor<T> reduce(const Tensor<T>& t, std::size_t axis, Reduction kind) {
  detail::check_axis(t.shape(), axis);
  const auto [outer, len, inner] = detail::split_axis(t.shape(), axis);
  Extents out_shape = t.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      T acc{};
      for (std::size_t k = 0; k < len; ++k) acc += t[(o * len + k) * inner + i];
      out[o * inner + i] = kind == Reduction::mean ? acc / static_cast<T>(len) : acc;
    }
  }
  return out;
}

/// Index of the maximum along `axis` for every remaining position, in
/// row-major order of the remaining axes. Ties resolve to the lowest index.
template <typename T>
std::vector<std::size_t> argmax(const Tensor<T>& t, std::size_t axis) {
  detail::check_axis(t.shape(), axis);
  const auto [outer, len, inner] = detail::split_axis(t.shape(), axis);
  std::vector<std::size_t> out(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = 0;
      T best_v = t[o * len * inner + i];
      for (std::size_t k = 1; k < len; ++k) {
        const T v = t[(o * len + k) * inner + i];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out[o * inner + i] = best;
    }
  }
  return out;
}

}  // namespace fer
