#pragma once

#include <cmath>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "revprop/dtype.hpp"
#include "revprop/errors.hpp"

namespace revprop {

/// Dense multi-dimensional array of f32 or f64 values in row-major order.
/// Tensors are plain values: copy/move like vectors, immutable by
/// convention once handed across a module boundary.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> dims, Dtype dt) {
    Tensor t;
    t.dims_ = std::move(dims);
    const std::size_t n = count(t.dims_);
    if (dt == Dtype::f32) {
      t.data_ = std::vector<float>(n, 0.0f);
    } else {
      t.data_ = std::vector<double>(n, 0.0);
    }
    return t;
  }

  static Tensor zeros_like(const Tensor& other) { return zeros(other.dims_, other.dtype()); }

  /// Build from explicit values (converted to the requested dtype).
  static Tensor from_values(std::vector<std::size_t> dims, const std::vector<double>& vals,
                            Dtype dt = Dtype::f64) {
    Tensor t = zeros(std::move(dims), dt);
    if (vals.size() != t.numel()) {
      throw ShapeError("from_values: " + std::to_string(vals.size()) + " values for " +
                       std::to_string(t.numel()) + " elements");
    }
    for (std::size_t i = 0; i < vals.size(); ++i) t.set(i, vals[i]);
    return t;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t numel() const { return count(dims_); }
  std::size_t byte_size() const { return numel() * dtype_size(dtype()); }
  bool defined() const { return !dims_.empty(); }

  Dtype dtype() const {
    return std::holds_alternative<std::vector<float>>(data_) ? Dtype::f32 : Dtype::f64;
  }

  template <typename T>
  std::span<T> values() {
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <typename T>
  std::span<const T> values() const {
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

  /// Converting scalar access; convenient for tests and glue code, not
  /// for kernels.
  double get(std::size_t flat) const {
    return dtype() == Dtype::f32 ? static_cast<double>(values<float>()[flat])
                                 : values<double>()[flat];
  }
  void set(std::size_t flat, double v) {
    if (dtype() == Dtype::f32) {
      values<float>()[flat] = static_cast<float>(v);
    } else {
      values<double>()[flat] = v;
    }
  }

  /// Same data, new dims; element count must match.
  Tensor reshaped(std::vector<std::size_t> new_dims) const& {
    Tensor t = *this;
    t.assign_dims(std::move(new_dims));
    return t;
  }
  Tensor reshaped(std::vector<std::size_t> new_dims) && {
    assign_dims(std::move(new_dims));
    return std::move(*this);
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_ && dtype() == o.dtype(); }

  bool all_finite() const {
    bool ok = true;
    if (dtype() == Dtype::f32) {
      for (float v : values<float>()) ok = ok && std::isfinite(v);
    } else {
      for (double v : values<double>()) ok = ok && std::isfinite(v);
    }
    return ok;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& dims) {
    std::size_t n = dims.empty() ? 0 : 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }

  void assign_dims(std::vector<std::size_t> new_dims) {
    if (count(new_dims) != numel()) {
      throw ShapeError("reshape: element count mismatch");
    }
    dims_ = std::move(new_dims);
  }

  std::vector<std::size_t> dims_;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

/// Invoke `f` with a value of the C++ type behind `dt` (tag dispatch).
template <class F>
decltype(auto) dispatch_dtype(Dtype dt, F&& f) {
  if (dt == Dtype::f32) return f(float{});
  return f(double{});
}

/// Exact bit-level equality, used by determinism and parity tests.
inline bool bits_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  if (a.dtype() == Dtype::f32) {
    auto va = a.values<float>(), vb = b.values<float>();
    return std::memcmp(va.data(), vb.data(), va.size_bytes()) == 0;
  }
  auto va = a.values<double>(), vb = b.values<double>();
  return std::memcmp(va.data(), vb.data(), va.size_bytes()) == 0;
}

}  // namespace revprop
