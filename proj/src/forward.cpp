#include "ptycho/forward.hpp"

#include <cmath>
#include <vector>

#include "ptycho/fft.hpp"

namespace ptycho {

void extract_view_into(std::span<const cfloat> object, const ScanGeometry& geometry, std::size_t k,
                       std::span<cfloat> view) {
  const auto& off = geometry.offset(k);
  const auto os = geometry.object_shape();
  const auto ps = geometry.probe_shape();
  if (object.size() != os.size() || view.size() != ps.size()) throw std::invalid_argument("extract: shape mismatch");
  for (std::size_t r = 0; r < ps.rows; ++r) {
    const cfloat* src = object.data() + (off.row + r) * os.cols + off.col;
    std::copy(src, src + ps.cols, view.data() + r * ps.cols);
  }
}

ComplexGrid extract_view(const ComplexGrid& object, const ScanGeometry& geometry, std::size_t k) {
  ComplexGrid view(geometry.probe_shape());
  extract_view_into(object.values(), geometry, k, view.values());
  return view;
}

void scatter_add(std::span<const cfloat> view, const ScanGeometry& geometry, std::size_t k,
                 std::span<cfloat> accumulator) {
  const auto& off = geometry.offset(k);
  const auto os = geometry.object_shape();
  const auto ps = geometry.probe_shape();
  if (accumulator.size() != os.size() || view.size() != ps.size()) {
    throw std::invalid_argument("scatter: shape mismatch");
  }
  for (std::size_t r = 0; r < ps.rows; ++r) {
    cfloat* dst = accumulator.data() + (off.row + r) * os.cols + off.col;
    const cfloat* src = view.data() + r * ps.cols;
    for (std::size_t c = 0; c < ps.cols; ++c) dst[c] += src[c];
  }
}

ComplexGrid& scatter_adjoint(const ComplexGrid& view, const ScanGeometry& geometry, std::size_t k,
                             ComplexGrid& accumulator) {
  if (view.shape() != geometry.probe_shape() || accumulator.shape() != geometry.object_shape()) {
    throw std::invalid_argument("scatter: shape mismatch");
  }
  scatter_add(view.values(), geometry, k, accumulator.values());
  return accumulator;
}

ComplexGrid exit_wave(const ModelState& state, const ScanGeometry& geometry, std::size_t k) {
  state.validate(geometry);
  ComplexGrid wave = extract_view(state.object, geometry, k);
  for (std::size_t i = 0; i < wave.size(); ++i) wave[i] *= state.probe[i];
  return wave;
}

ComplexGrid far_field(const ComplexGrid& wave) {
  ComplexGrid out(wave.shape());
  UnitaryFft2d(wave.shape()).forward(wave.values(), out.values());
  return out;
}

ComplexGrid inverse_far_field(const ComplexGrid& wave) {
  ComplexGrid out(wave.shape());
  UnitaryFft2d(wave.shape()).inverse(wave.values(), out.values());
  return out;
}

RealGrid expected_intensity(const ComplexGrid& far, const RealGrid& background, float surrogate) {
  if (!(surrogate >= 0.0f)) throw std::invalid_argument("surrogate offset must be >= 0");
  if (far.shape() != background.shape()) throw std::invalid_argument("background shape mismatch");
  RealGrid h(far.shape());
  for (std::size_t i = 0; i < far.size(); ++i) {
    if (!(background[i] > 0.0f)) throw std::invalid_argument("background must be strictly positive");
    h[i] = abs2(far[i]) + background[i] + surrogate;
  }
  return h;
}

RealGrid expected_magnitude(const RealGrid& intensity) {
  RealGrid zeta(intensity.shape());
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    if (!(intensity[i] > 0.0f)) throw std::invalid_argument("expected intensity must be strictly positive");
    zeta[i] = std::sqrt(intensity[i]);
  }
  return zeta;
}

ComplexStack far_field_stack(const ModelState& state, const ScanGeometry& geometry, FlopCounter* counter) {
  state.validate(geometry);
  const auto ps = geometry.probe_shape();
  const std::size_t m = ps.size();
  ComplexStack out(geometry.count(), ps);
  UnitaryFft2d fft(ps);
  for (std::size_t k = 0; k < geometry.count(); ++k) {
    auto slice = out.slice(k);
    extract_view_into(state.object.values(), geometry, k, slice);
    for (std::size_t i = 0; i < m; ++i) slice[i] *= state.probe[i];
    fft.forward(slice, slice);
  }
  charge_cmul(counter, geometry.count() * m);
  charge_fft(counter, m, geometry.count());
  return out;
}

RealStack forward_magnitudes(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background,
                             float surrogate, FlopCounter* counter) {
  if (!(surrogate >= 0.0f)) throw std::invalid_argument("surrogate offset must be >= 0");
  if (background.shape() != geometry.probe_shape()) throw std::invalid_argument("background shape mismatch");
  for (float b : background.values()) {
    if (!(b > 0.0f)) throw std::invalid_argument("background must be strictly positive");
  }
  const ComplexStack far = far_field_stack(state, geometry, counter);
  RealStack zeta(far.count(), far.slice_shape());
  const std::size_t m = far.slice_size();
  for (std::size_t k = 0; k < far.count(); ++k) {
    auto f = far.slice(k);
    auto z = zeta.slice(k);
    for (std::size_t i = 0; i < m; ++i) z[i] = std::sqrt(abs2(f[i]) + background[i] + surrogate);
  }
  charge_real(counter, 6 * far.size());
  return zeta;
}

double surrogate_schedule(std::size_t t, std::size_t length, double initial, double floor) {
  if (length == 0) throw std::invalid_argument("surrogate schedule length must be >= 1");
  if (!(initial > 0.0) || !(floor > 0.0)) throw std::invalid_argument("surrogate offsets must be positive");
  if (t >= length) return 0.0;
  if (length == 1) return initial;
  const double frac = static_cast<double>(t) / static_cast<double>(length - 1);
  return initial * std::pow(floor / initial, frac);
}

}  // namespace ptycho
