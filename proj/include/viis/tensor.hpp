#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "viis/error.hpp"

namespace viis {

inline int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimError("non-positive extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major tensor of arbitrary rank. Value-semantic; the scalar type
/// is float for compute and double for the gradient-check harness.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)), data(numel(shape), S(0)) {}
  Tensor(std::vector<int> sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw DimError("tensor data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }
  static Tensor full(std::vector<int> sh, S v) {
    Tensor t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 4-D index (NCHW and friends)
  S& at4(int a, int b, int c, int d) {
    return data[((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  const S& at4(int a, int b, int c, int d) const {
    return data[((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  S& at3(int a, int b, int c) {
    return data[(static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c];
  }
  const S& at3(int a, int b, int c) const {
    return data[(static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c];
  }
  S& at2(int a, int b) { return data[static_cast<int64_t>(a) * shape[1] + b]; }
  const S& at2(int a, int b) const { return data[static_cast<int64_t>(a) * shape[1] + b]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename T2>
  Tensor<T2> cast() const {
    Tensor<T2> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T2>(data[i]);
    return out;
  }
};

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
  if (!a.same_shape(b))
    throw DimError(std::string(where) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace viis
