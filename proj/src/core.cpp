#include "ptycho/core.hpp"

#include <cmath>
#include <numeric>

namespace ptycho {

ScanGeometry::ScanGeometry(Shape object_shape, Shape probe_shape, std::vector<Offset> offsets)
    : object_shape_(object_shape), probe_shape_(probe_shape), offsets_(std::move(offsets)) {
  if (probe_shape_.rows == 0 || probe_shape_.cols == 0) {
    throw std::invalid_argument("probe shape must be non-empty");
  }
  if (probe_shape_.rows > object_shape_.rows || probe_shape_.cols > object_shape_.cols) {
    throw std::invalid_argument("probe larger than object");
  }
  if (offsets_.empty()) {
    throw std::invalid_argument("scan needs at least one position");
  }
  for (const auto& o : offsets_) {
    if (o.row + probe_shape_.rows > object_shape_.rows || o.col + probe_shape_.cols > object_shape_.cols) {
      throw std::invalid_argument("scan offset (" + std::to_string(o.row) + "," + std::to_string(o.col) +
                                  ") places the probe outside the object");
    }
  }
}

ScanGeometry ScanGeometry::raster(Shape object_shape, Shape probe_shape, std::size_t step,
                                  std::size_t per_axis) {
  if (per_axis == 0) throw std::invalid_argument("raster needs at least one position per axis");
  const std::size_t span_rows = (per_axis - 1) * step + probe_shape.rows;
  const std::size_t span_cols = (per_axis - 1) * step + probe_shape.cols;
  if (span_rows > object_shape.rows || span_cols > object_shape.cols) {
    throw std::invalid_argument("raster does not fit inside the object");
  }
  const std::size_t row0 = (object_shape.rows - span_rows) / 2;
  const std::size_t col0 = (object_shape.cols - span_cols) / 2;
  std::vector<Offset> offsets;
  offsets.reserve(per_axis * per_axis);
  for (std::size_t i = 0; i < per_axis; ++i) {
    for (std::size_t j = 0; j < per_axis; ++j) {
      offsets.push_back({row0 + i * step, col0 + j * step});
    }
  }
  return ScanGeometry(object_shape, probe_shape, std::move(offsets));
}

const Offset& ScanGeometry::offset(std::size_t k) const {
  if (k >= offsets_.size()) throw std::out_of_range("scan position index out of range");
  return offsets_[k];
}

RIVector::RIVector(std::size_t length, float fill) : data_(length, fill) {
  if (length % 2 != 0) throw std::invalid_argument("RIVector length must be even");
}

RIVector::RIVector(std::vector<float> data) : data_(std::move(data)) {
  if (data_.size() % 2 != 0) throw std::invalid_argument("RIVector length must be even");
}

RIVector to_rivector(std::span<const ComplexGrid* const> grids) {
  if (grids.empty()) throw std::invalid_argument("to_rivector needs at least one grid");
  std::size_t total = 0;
  for (const auto* g : grids) total += g->size();
  RIVector out(2 * total);
  std::size_t pos = 0;
  for (const auto* g : grids) {
    for (std::size_t i = 0; i < g->size(); ++i, ++pos) {
      out[pos] = (*g)[i].real();
      out[total + pos] = (*g)[i].imag();
    }
  }
  return out;
}

RIVector to_rivector(const ComplexGrid& grid) {
  const ComplexGrid* grids[] = {&grid};
  return to_rivector(grids);
}

RIVector to_rivector(const ComplexGrid& first, const ComplexGrid& second) {
  const ComplexGrid* grids[] = {&first, &second};
  return to_rivector(grids);
}

std::vector<ComplexGrid> from_rivector(const RIVector& v, std::span<const Shape> shapes) {
  std::size_t total = 0;
  for (const auto& s : shapes) total += s.size();
  if (v.size() != 2 * total) throw std::invalid_argument("RIVector length does not match the requested shapes");
  std::vector<ComplexGrid> out;
  out.reserve(shapes.size());
  std::size_t pos = 0;
  for (const auto& s : shapes) {
    ComplexGrid g(s);
    for (std::size_t i = 0; i < g.size(); ++i, ++pos) g[i] = {v[pos], v[total + pos]};
    out.push_back(std::move(g));
  }
  return out;
}

void ModelState::validate(const ScanGeometry& geometry) const {
  if (object.shape() != geometry.object_shape()) throw std::invalid_argument("object shape mismatch");
  if (probe.shape() != geometry.probe_shape()) throw std::invalid_argument("probe shape mismatch");
  if (!(surrogate_offset >= 0.0f)) throw std::invalid_argument("surrogate offset must be >= 0");
}

DiffractionStack::DiffractionStack(RealStack patterns, RealGrid background)
    : patterns_(std::move(patterns)), background_(std::move(background)) {
  if (patterns_.slice_shape() != background_.shape()) {
    throw std::invalid_argument("background shape must match the pattern shape");
  }
  for (float y : patterns_.values()) {
    if (!(y >= 0.0f) || !std::isfinite(y)) throw std::invalid_argument("measured counts must be finite and >= 0");
  }
  for (float b : background_.values()) {
    if (!(b > 0.0f) || !std::isfinite(b)) throw std::invalid_argument("background must be strictly positive");
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double norm2(std::span<const float> a) { return std::sqrt(dot(a, a)); }

void axpy(float alpha, std::span<const float> x, std::span<float> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double max_abs2(std::span<const cfloat> values) {
  double m = 0.0;
  for (const auto& z : values) m = std::max(m, static_cast<double>(abs2(z)));
  return m;
}

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ptycho
