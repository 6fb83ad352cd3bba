#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dualdis {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

/// Raised when a tensor does not have the shape an operation expects.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& where, const std::string& expected, const Shape& actual)
      : Error(where + ": expected shape " + expected + ", got " + to_string(actual)),
        where_(where), expected_(expected), actual_(actual) {}

  const std::string& where() const noexcept { return where_; }
  const std::string& expected() const noexcept { return expected_; }
  const Shape& actual() const noexcept { return actual_; }

 private:
  std::string where_;
  std::string expected_;
  Shape actual_;
};

/// Element count of a shape whose extents must all be non-negative.
inline std::size_t checked_num_elements(const Shape& shape) {
  for (int d : shape)
    if (d < 0) throw ShapeError("tensor", "non-negative extents", shape);
  return num_elements(shape);
}


/// Dense row-major n-dimensional array.
/// 64-byte aligned allocator. Eigen picks its vectorized peel from the base
/// address, so aligned buffers make results depend on shapes only.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }
  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(checked_num_elements(shape_), fill) {
    validate_shape();
  }

  Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != num_elements(shape_)) {
      throw ShapeError("Tensor", std::to_string(data_.size()) + " elements", shape_);
    }
  }

  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    validate_shape();
    if (data_.size() != num_elements(shape_)) {
      throw ShapeError("Tensor", std::to_string(data_.size()) + " elements", shape_);
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  Buffer<T>& storage() noexcept { return data_; }
  const Buffer<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  T& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const {
    if (num_elements(shape) != data_.size()) throw ShapeError("reshape", to_string(shape_) + "-compatible", shape);
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Adds `other` elementwise; shapes must match.
  Tensor& operator+=(const Tensor& other) {
    if (other.shape_ != shape_) throw ShapeError("Tensor::+=", to_string(shape_), other.shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    Buffer<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  /// Rows [begin, end) along the leading axis.
  Tensor slice_rows(int begin, int end) const {
    if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end) {
      throw ShapeError("slice_rows", "leading axis >= " + std::to_string(end), shape_);
    }
    const std::size_t row = data_.size() / std::max(shape_[0], 1);
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(s, Buffer<T>(data_.begin() + begin * row, data_.begin() + end * row));
  }

  /// Gathers rows (leading-axis entries) by index.
  Tensor gather_rows(std::span<const int> rows) const {
    const std::size_t row = shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
    Shape s = shape_;
    s[0] = static_cast<int>(rows.size());
    Buffer<T> out;
    out.reserve(rows.size() * row);
    for (int r : rows) {
      if (r < 0 || r >= shape_[0]) throw ShapeError("gather_rows", "row index < " + std::to_string(shape_[0]), shape_);
      out.insert(out.end(), data_.begin() + r * row, data_.begin() + (r + 1) * row);
    }
    return Tensor(s, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void validate_shape() const {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("Tensor", "non-negative extents", shape_);
    }
  }

  Shape shape_;
  Buffer<T> data_;
};

/// Concatenates tensors along the leading axis.
template <class T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s[0] = 0;
  Buffer<T> out;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape ref(parts.front().shape().begin() + 1, parts.front().shape().end());
    if (tail != ref) throw ShapeError("concat_rows", to_string(parts.front().shape()), p.shape());
    s[0] += p.dim(0);
    out.insert(out.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor<T>(s, std::move(out));
}

}  // namespace dualdis
