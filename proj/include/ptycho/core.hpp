#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptycho {

using cfloat = std::complex<float>;

/// Raised when a solver cannot continue (non-finite values, divergence).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid solver or run configurations.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major 2D array.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  explicit Grid(Shape shape, T fill = T{}) : Grid(shape.rows, shape.cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("grid data length does not match rows*cols");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  Shape shape() const { return {rows_, cols_}; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using ComplexGrid = Grid<cfloat>;
using RealGrid = Grid<float>;

/// K equally shaped 2D slices stored contiguously (slice-major, row-major inside).
template <typename T>
class Stack {
 public:
  Stack() = default;
  Stack(std::size_t count, Shape slice_shape, T fill = T{})
      : count_(count), shape_(slice_shape), data_(count * slice_shape.size(), fill) {}

  std::size_t count() const { return count_; }
  Shape slice_shape() const { return shape_; }
  std::size_t slice_size() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<T> slice(std::size_t k) { return std::span<T>(data_).subspan(k * shape_.size(), shape_.size()); }
  std::span<const T> slice(std::size_t k) const {
    return std::span<const T>(data_).subspan(k * shape_.size(), shape_.size());
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_layout(const Stack& other) const { return count_ == other.count_ && shape_ == other.shape_; }
  friend bool operator==(const Stack&, const Stack&) = default;

 private:
  std::size_t count_ = 0;
  Shape shape_{};
  std::vector<T> data_;
};

using RealStack = Stack<float>;
using ComplexStack = Stack<cfloat>;

struct Offset {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// Object/probe shapes and the K integer scan offsets (top-left corner of each probe window).
class ScanGeometry {
 public:
  ScanGeometry(Shape object_shape, Shape probe_shape, std::vector<Offset> offsets);

  /// Regular raster of `per_axis` x `per_axis` positions with the given pixel step, centered in the object.
  static ScanGeometry raster(Shape object_shape, Shape probe_shape, std::size_t step, std::size_t per_axis);

  Shape object_shape() const { return object_shape_; }
  Shape probe_shape() const { return probe_shape_; }
  const std::vector<Offset>& offsets() const { return offsets_; }
  const Offset& offset(std::size_t k) const;
  std::size_t count() const { return offsets_.size(); }
  std::size_t object_size() const { return object_shape_.size(); }
  std::size_t probe_size() const { return probe_shape_.size(); }

 private:
  Shape object_shape_;
  Shape probe_shape_;
  std::vector<Offset> offsets_;
};

/// Stacked real coordinates [Re(z_1..z_L); Im(z_1..z_L)].
class RIVector {
 public:
  RIVector() = default;
  explicit RIVector(std::size_t length, float fill = 0.0f);
  explicit RIVector(std::vector<float> data);

  std::size_t size() const { return data_.size(); }
  std::size_t half() const { return data_.size() / 2; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  friend bool operator==(const RIVector&, const RIVector&) = default;

 private:
  std::vector<float> data_;
};

RIVector to_rivector(std::span<const ComplexGrid* const> grids);
RIVector to_rivector(const ComplexGrid& grid);
RIVector to_rivector(const ComplexGrid& first, const ComplexGrid& second);
std::vector<ComplexGrid> from_rivector(const RIVector& v, std::span<const Shape> shapes);

struct ModelState {
  ComplexGrid object;
  ComplexGrid probe;
  bool optimize_object = true;
  bool optimize_probe = false;
  float surrogate_offset = 0.0f;

  /// Throws std::invalid_argument if shapes disagree with the geometry or the offset is negative.
  void validate(const ScanGeometry& geometry) const;
};

/// Measured patterns y_k and the per-detector-pixel background b.
class DiffractionStack {
 public:
  DiffractionStack(RealStack patterns, RealGrid background);

  const RealStack& patterns() const { return patterns_; }
  const RealGrid& background() const { return background_; }
  std::size_t count() const { return patterns_.count(); }

 private:
  RealStack patterns_;
  RealGrid background_;
};

/// |z|^2 without the hypot() call std::norm makes for complex types.
template <typename T>
inline T abs2(const std::complex<T>& z) {
  return z.real() * z.real() + z.imag() * z.imag();
}

// Vector helpers; reductions accumulate in double.
double dot(std::span<const float> a, std::span<const float> b);
double norm2(std::span<const float> a);
void axpy(float alpha, std::span<const float> x, std::span<float> y);
double max_abs2(std::span<const cfloat> values);
bool all_finite(std::span<const float> values);

}  // namespace ptycho
