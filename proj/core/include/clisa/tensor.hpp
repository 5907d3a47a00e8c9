#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clisa {

/// Thrown when tensor extents do not line up (offending axes in the message).
struct dim_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a value or a computation leaves the finite range.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid run or hyperparameter configuration.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mismatched trials, absent subjects, malformed datasets.
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major real tensor. Immutable by convention once handed to the
/// graph; plain value semantics otherwise. Real is float in training mode and
/// double in verification mode.
template <class Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(count(shape), Real(0)) {}

  Tensor(std::vector<std::size_t> s, std::vector<Real> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape))
      throw dim_error("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str());
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::size_t> s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return s.empty() ? 0 : n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }

  // rank-2 / rank-3 accessors; no bounds check in release paths
  Real& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  Real at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  Real& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  Real at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

template <class Real>
inline void require_shape(const Tensor<Real>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw dim_error(std::string(what) + ": expected rank " + std::to_string(rank) +
                    ", got " + t.shape_str());
}

}  // namespace clisa
