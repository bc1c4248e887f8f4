#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pgt/errors.hpp"

namespace pgt {

using Shape = std::vector<std::size_t>;

enum class DType { f32, f64 };

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t shape_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Leading axis is frames for sequence data
/// ([T, C] or [T, C, H, W]); a single frame feature is [C] or [C, H, W].
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  explicit Array(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_elements(shape_), fill) {}
  Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_elements(shape_)) {
      throw ShapeError("array data has " + std::to_string(data_.size()) +
                       " elements but shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_elements(shape_)));
    }
  }

  static Array scalar(T v) { return Array(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Number of frames (leading extent).
  std::size_t frames() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Elements per frame.
  std::size_t frame_size() const { return frames() == 0 ? 0 : data_.size() / frames(); }
  /// Shape of one frame (the trailing axes).
  Shape frame_shape() const { return Shape(shape_.begin() + 1, shape_.end()); }

  std::span<const T> frame(std::size_t t) const {
    return std::span<const T>(data_).subspan(t * frame_size(), frame_size());
  }
  std::span<T> frame(std::size_t t) {
    return std::span<T>(data_).subspan(t * frame_size(), frame_size());
  }

  /// Copy of frames [begin, end).
  Array slice_frames(std::size_t begin, std::size_t end) const {
    if (begin > end || end > frames()) {
      throw ShapeError("frame slice [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of range for " + std::to_string(frames()) + " frames");
    }
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t fs = frame_size();
    return Array(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * fs),
                                              data_.begin() + static_cast<std::ptrdiff_t>(end * fs)));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Array<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Array<U>(shape_, std::move(out));
  }

  bool operator==(const Array& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Array<T>& a, const Array<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
T max_abs_diff(const Array<T>& a, const Array<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace pgt
