#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "revprop/errors.hpp"

namespace revprop {

/// Element type of a Tensor. f32 is the benchmarking type, f64 the
/// verification type; every kernel is compiled for both.
enum class Dtype : std::uint8_t { f32, f64 };

inline std::size_t dtype_size(Dtype dt) {
  return dt == Dtype::f32 ? sizeof(float) : sizeof(double);
}

inline const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

inline Dtype parse_dtype(const std::string& s) {
  if (s == "f32") return Dtype::f32;
  if (s == "f64") return Dtype::f64;
  throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

}  // namespace revprop
