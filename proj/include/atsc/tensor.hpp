#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atsc {

// Error taxonomy shared by every module.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-facing configuration (bad reduction factor, missing field, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an operation precondition (shape mismatch, label range, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Shape combination outside what the framework supports.
class UnsupportedShape : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class StartupError : public Error {
 public:
  using Error::Error;
};

/// Raised when a training objective becomes non-finite or explodes.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string component, double value, int epoch = -1, int batch = -1)
      : Error(describe(component, value, epoch, batch)),
        component_(std::move(component)),
        value_(value),
        epoch_(epoch),
        batch_(batch) {}

  const std::string& component() const noexcept { return component_; }
  double value() const noexcept { return value_; }
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

  DivergenceError at(int epoch, int batch) const {
    return DivergenceError(component_, value_, epoch, batch);
  }

 private:
  static std::string describe(const std::string& c, double v, int epoch, int batch) {
    std::ostringstream os;
    os << "training diverged: " << c << " = " << v;
    if (epoch >= 0) os << " (epoch " << epoch << ", batch " << batch << ")";
    return os.str();
  }

  std::string component_;
  double value_;
  int epoch_;
  int batch_;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major tensor. Feature maps use (batch, H, W, Ch) layout everywhere.
template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s, S fill = S(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
      throw ContractViolation("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }

  S& operator[](std::size_t i) noexcept { return data[i]; }
  const S& operator[](std::size_t i) const noexcept { return data[i]; }

  // NHWC element access.
  S& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
    return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
  }
  const S& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
  }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](S v) { return std::isfinite(v); });
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline void require_feature_map(const Shape& s, const char* what) {
  if (s.size() != 4 || s[0] == 0 || s[1] == 0 || s[2] == 0 || s[3] == 0)
    throw ContractViolation(std::string(what) + ": expected (batch,H,W,Ch) feature map, got " +
                            shape_str(s));
}

}  // namespace atsc
