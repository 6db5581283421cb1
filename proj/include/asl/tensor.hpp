#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "asl/error.hpp"
#include "asl/prng.hpp"

namespace asl {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

/// Dense row-major array. The shape is fixed at construction; the values are
/// writable so kernels can fill an output in place.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_dims();
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor of shape " + to_string(shape_) + " cannot hold " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... I>
  T& at(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  const T& at(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Same values viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape_));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw ShapeError("index of rank " + std::to_string(idx.size()) + " into tensor " +
                       to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i >= shape_[axis]) throw ShapeError("index out of range for " + to_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

enum class ElementOp { add, sub, mul };

template <typename T>
T apply_op(ElementOp op, T a, T b) {
  switch (op) {
    case ElementOp::add: return a + b;
    case ElementOp::sub: return a - b;
    case ElementOp::mul: return a * b;
  }
  return a;
}

template <typename T>
Tensor<T> map_elementwise(ElementOp op, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "map_elementwise");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply_op(op, a[i], b[i]);
  return out;
}

template <typename T>
Tensor<T> map_elementwise(ElementOp op, const Tensor<T>& a, T b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply_op(op, a[i], b);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return map_elementwise(ElementOp::add, a, b); }
template <typename T>
Tensor<T> add(const Tensor<T>& a, T b) { return map_elementwise(ElementOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return map_elementwise(ElementOp::sub, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, T b) { return map_elementwise(ElementOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return map_elementwise(ElementOp::mul, a, b); }
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) { return map_elementwise(ElementOp::mul, a, s); }

template <typename T, typename F>
Tensor<T> apply(const Tensor<T>& a, F&& fn) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  require_same_shape(acc.shape(), x.shape(), "add_inplace");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s{0};
  for (auto v : a.values()) s += v;
  return s;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Matrix products. out[i,j] accumulates a[i,p]*b[p,j] with p ascending, in
// every backend.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// ---------------------------------------------------------------------------
// Random tensors

/// n Gaussian samples; pairs come from Box-Muller, an odd tail discards the
/// second value of its pair.
template <typename T>
Tensor<T> rng_gaussian(Prng& rng, std::size_t n, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ParameterError("rng_gaussian: stddev must be >= 0");
  if (n == 0) throw ParameterError("rng_gaussian: n must be positive");
  Tensor<T> out({n});
  for (std::size_t i = 0; i < n; i += 2) {
    auto [z0, z1] = rng.gaussian_pair();
    out[i] = static_cast<T>(mean + stddev * z0);
    if (i + 1 < n) out[i + 1] = static_cast<T>(mean + stddev * z1);
  }
  return out;
}

template <typename T>
Tensor<T> rng_uniform(Prng& rng, Shape shape, double lo, double hi) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.values()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return out;
}

}  // namespace asl
