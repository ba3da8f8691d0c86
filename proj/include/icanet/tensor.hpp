#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace icanet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when NaN/Inf shows up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double> || std::same_as<T, long double>;

/// Accumulator type: double, or T itself when T is wider.
template <Real T>
using Wide = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

/// Extents of a dense NCHW tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  [[nodiscard]] constexpr std::size_t numel() const { return n * c * h * w; }
  [[nodiscard]] constexpr std::size_t plane() const { return h * w; }
  [[nodiscard]] constexpr std::array<std::size_t, 4> dims() const { return {n, c, h, w}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

inline void expect_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

/// Dense row-major N->C->H->W array with an optional gradient buffer.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t numel() const { return data_.size(); }
  [[nodiscard]] std::size_t n() const { return shape_.n; }
  [[nodiscard]] std::size_t c() const { return shape_.c; }
  [[nodiscard]] std::size_t h() const { return shape_.h; }
  [[nodiscard]] std::size_t w() const { return shape_.w; }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] std::vector<T>& storage() { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[offset(n, c, y, x)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }

  [[nodiscard]] bool requires_grad() const { return grad_.has_value(); }

  /// Turning gradients on allocates a zeroed buffer; turning them off drops it.
  void set_requires_grad(bool on) {
    if (on && !grad_) {
      grad_.emplace(data_.size(), T(0));
    } else if (!on) {
      grad_.reset();
    }
  }

  [[nodiscard]] std::span<T> grad() {
    if (!grad_) throw Error("Tensor::grad: tensor does not require grad");
    return *grad_;
  }
  [[nodiscard]] std::span<const T> grad() const {
    if (!grad_) throw Error("Tensor::grad: tensor does not require grad");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string(what) + ": non-finite value in tensor " + shape_.str());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <Real U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
  std::optional<std::vector<T>> grad_;
};

}  // namespace icanet
