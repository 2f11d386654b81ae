#include "ptycho/matfree.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ptycho/fft.hpp"
#include "ptycho/forward.hpp"

namespace ptycho {
namespace {

bool has_object(VariableSelector sel) { return sel != VariableSelector::ProbeOnly; }
bool has_probe(VariableSelector sel) { return sel != VariableSelector::ObjectOnly; }

// Complex view of a real coordinate vector, split into object and probe parts.
struct Tangent {
  std::vector<cfloat> object;
  std::vector<cfloat> probe;
};

Tangent split(const RIVector& v, std::size_t n_obj, std::size_t n_probe, VariableSelector sel) {
  const std::size_t no = has_object(sel) ? n_obj : 0;
  const std::size_t np = has_probe(sel) ? n_probe : 0;
  if (v.size() != 2 * (no + np)) throw std::invalid_argument("coordinate vector length does not match the selector");
  const std::size_t half = no + np;
  Tangent t;
  t.object.resize(no);
  t.probe.resize(np);
  for (std::size_t i = 0; i < no; ++i) t.object[i] = {v[i], v[half + i]};
  for (std::size_t i = 0; i < np; ++i) t.probe[i] = {v[no + i], v[half + no + i]};
  return t;
}

RIVector merge(const std::vector<cfloat>& object, const std::vector<cfloat>& probe) {
  const std::size_t half = object.size() + probe.size();
  RIVector v(2 * half);
  for (std::size_t i = 0; i < object.size(); ++i) {
    v[i] = object[i].real();
    v[half + i] = object[i].imag();
  }
  for (std::size_t i = 0; i < probe.size(); ++i) {
    v[object.size() + i] = probe[i].real();
    v[half + object.size() + i] = probe[i].imag();
  }
  return v;
}

}  // namespace

std::size_t variable_length(const ScanGeometry& geometry, VariableSelector sel) {
  std::size_t n = 0;
  if (has_object(sel)) n += geometry.object_size();
  if (has_probe(sel)) n += geometry.probe_size();
  return 2 * n;
}

RIVector pack_variables(const ModelState& state, VariableSelector sel) {
  std::vector<cfloat> object;
  std::vector<cfloat> probe;
  if (has_object(sel)) object = state.object.storage();
  if (has_probe(sel)) probe = state.probe.storage();
  return merge(object, probe);
}

void unpack_variables(const RIVector& v, VariableSelector sel, ModelState& state) {
  Tangent t = split(v, state.object.size(), state.probe.size(), sel);
  if (has_object(sel)) std::copy(t.object.begin(), t.object.end(), state.object.values().begin());
  if (has_probe(sel)) std::copy(t.probe.begin(), t.probe.end(), state.probe.values().begin());
}

Linearization::Linearization(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background,
                             FlopCounter* counter)
    : geometry_(geometry),
      object_(state.object),
      probe_(state.probe),
      background_(background),
      surrogate_(state.surrogate_offset),
      far_(far_field_stack(state, geometry, counter)) {
  if (background_.shape() != geometry.probe_shape()) throw std::invalid_argument("background shape mismatch");
  for (float b : background_.values()) {
    if (!(b > 0.0f)) throw std::invalid_argument("background must be strictly positive");
  }
  zeta_ = RealStack(far_.count(), far_.slice_shape());
  refresh_magnitudes();
  charge_real(counter, 4 * far_.size());
}

void Linearization::set_surrogate(float offset) {
  if (!(offset >= 0.0f)) throw std::invalid_argument("surrogate offset must be >= 0");
  if (offset == surrogate_) return;
  surrogate_ = offset;
  refresh_magnitudes();
}

void Linearization::refresh_magnitudes() {
  const std::size_t m = far_.slice_size();
  for (std::size_t k = 0; k < far_.count(); ++k) {
    auto f = far_.slice(k);
    auto z = zeta_.slice(k);
    for (std::size_t i = 0; i < m; ++i) z[i] = std::sqrt(abs2(f[i]) + background_[i] + surrogate_);
  }
}

double Linearization::excess(const RealStack& y, MetricKind kind) const {
  if (!y.same_layout(zeta_)) throw std::invalid_argument("data shape does not match the scan");
  const std::size_t m = far_.slice_size();
  double total = 0.0;
  for (std::size_t k = 0; k < far_.count(); ++k) {
    auto f = far_.slice(k);
    auto d = y.slice(k);
    for (std::size_t i = 0; i < m; ++i) {
      const double h = abs2(std::complex<double>(f[i])) + background_[i] + surrogate_;
      total += pixel::excess(h, d[i], kind);
    }
  }
  return total;
}

double Linearization::value(const RealStack& y, MetricKind kind) const {
  return excess(y, kind) + metric_floor(y.values(), kind);
}

RealStack Linearization::data_gradient(const RealStack& y, MetricKind kind, CurvatureBasis basis) const {
  if (!y.same_layout(zeta_)) throw std::invalid_argument("data shape does not match the scan");
  RealStack out(zeta_.count(), zeta_.slice_shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = basis == CurvatureBasis::Magnitude ? pixel::grad_magnitude(zeta_[i], y[i], kind)
                                                : pixel::grad_intensity(zeta_[i] * zeta_[i], y[i], kind);
  }
  return out;
}

RealStack Linearization::data_curvature(const RealStack& y, MetricKind kind, CurvatureBasis basis) const {
  if (!y.same_layout(zeta_)) throw std::invalid_argument("data shape does not match the scan");
  RealStack out(zeta_.count(), zeta_.slice_shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = basis == CurvatureBasis::Magnitude ? pixel::hess_magnitude(zeta_[i], y[i], kind)
                                                : pixel::hess_intensity(zeta_[i] * zeta_[i], y[i], kind);
  }
  return out;
}

// The three products share two per-position kernels:
//   tangent:   d(psi_hat) = F (dP .* S O + P .* S dO), then the data-space tangent
//   cotangent: chi = F^H(psi_hat .* c .* w), scattered back through P and S O
// with c = 1/zeta for the magnitude basis and 2 for the intensity basis.

RealStack Linearization::jvp(const RIVector& v, VariableSelector sel, CurvatureBasis basis,
                             FlopCounter* counter) const {
  const auto& g = geometry_;
  const Tangent t = split(v, g.object_size(), g.probe_size(), sel);
  const std::size_t m = g.probe_size();
  UnitaryFft2d fft(g.probe_shape());
  std::vector<cfloat> view(m);
  std::vector<cfloat> dview(m);
  std::vector<cfloat> buf(m);
  RealStack out(far_.count(), far_.slice_shape());
  for (std::size_t k = 0; k < g.count(); ++k) {
    std::fill(buf.begin(), buf.end(), cfloat{});
    if (has_probe(sel)) {
      extract_view_into(object_.values(), g, k, view);
      for (std::size_t i = 0; i < m; ++i) buf[i] += t.probe[i] * view[i];
    }
    if (has_object(sel)) {
      extract_view_into(t.object, g, k, dview);
      for (std::size_t i = 0; i < m; ++i) buf[i] += probe_[i] * dview[i];
    }
    fft.forward(buf, buf);
    auto f = far_.slice(k);
    auto z = zeta_.slice(k);
    auto o = out.slice(k);
    for (std::size_t i = 0; i < m; ++i) {
      const float re = f[i].real() * buf[i].real() + f[i].imag() * buf[i].imag();
      o[i] = basis == CurvatureBasis::Magnitude ? re / z[i] : 2.0f * re;
    }
  }
  const std::uint64_t terms = (has_object(sel) ? 1 : 0) + (has_probe(sel) ? 1 : 0);
  charge_cmul(counter, g.count() * m * terms);
  charge_cadd(counter, g.count() * m * terms);
  charge_fft(counter, m, g.count());
  charge_real(counter, 4 * g.count() * m);
  return out;
}

RIVector Linearization::jtvp(const RealStack& w, VariableSelector sel, CurvatureBasis basis,
                             FlopCounter* counter) const {
  if (!w.same_layout(zeta_)) throw std::invalid_argument("cotangent shape does not match the scan");
  const auto& g = geometry_;
  const std::size_t m = g.probe_size();
  UnitaryFft2d fft(g.probe_shape());
  std::vector<cfloat> gobj(has_object(sel) ? g.object_size() : 0);
  std::vector<cfloat> gprobe(has_probe(sel) ? m : 0);
  std::vector<cfloat> view(m);
  std::vector<cfloat> buf(m);
  for (std::size_t k = 0; k < g.count(); ++k) {
    auto f = far_.slice(k);
    auto z = zeta_.slice(k);
    auto wk = w.slice(k);
    for (std::size_t i = 0; i < m; ++i) {
      const float c = basis == CurvatureBasis::Magnitude ? wk[i] / z[i] : 2.0f * wk[i];
      buf[i] = f[i] * c;
    }
    fft.inverse(buf, buf);
    if (has_probe(sel)) {
      extract_view_into(object_.values(), g, k, view);
      for (std::size_t i = 0; i < m; ++i) gprobe[i] += std::conj(view[i]) * buf[i];
    }
    if (has_object(sel)) {
      for (std::size_t i = 0; i < m; ++i) buf[i] *= std::conj(probe_[i]);
      scatter_add(buf, g, k, gobj);
    }
  }
  const std::uint64_t terms = (has_object(sel) ? 1 : 0) + (has_probe(sel) ? 1 : 0);
  charge_real(counter, 3 * g.count() * m);
  charge_fft(counter, m, g.count());
  charge_cmul(counter, g.count() * m * terms);
  charge_cadd(counter, g.count() * m * terms);
  return merge(gobj, gprobe);
}

RIVector Linearization::ggn_vec(const RIVector& v, const RealStack& curvature, VariableSelector sel,
                                CurvatureBasis basis, FlopCounter* counter) const {
  if (!curvature.same_layout(zeta_)) throw std::invalid_argument("curvature shape does not match the scan");
  const auto& g = geometry_;
  const Tangent t = split(v, g.object_size(), g.probe_size(), sel);
  const std::size_t m = g.probe_size();
  UnitaryFft2d fft(g.probe_shape());
  std::vector<cfloat> gobj(has_object(sel) ? g.object_size() : 0);
  std::vector<cfloat> gprobe(has_probe(sel) ? m : 0);
  std::vector<cfloat> view(m);
  std::vector<cfloat> dview(m);
  std::vector<cfloat> buf(m);
  const bool magnitude = basis == CurvatureBasis::Magnitude;
  for (std::size_t k = 0; k < g.count(); ++k) {
    std::fill(buf.begin(), buf.end(), cfloat{});
    if (has_probe(sel)) {
      extract_view_into(object_.values(), g, k, view);
      for (std::size_t i = 0; i < m; ++i) buf[i] += t.probe[i] * view[i];
    }
    if (has_object(sel)) {
      extract_view_into(t.object, g, k, dview);
      for (std::size_t i = 0; i < m; ++i) buf[i] += probe_[i] * dview[i];
    }
    fft.forward(buf, buf);
    auto f = far_.slice(k);
    auto z = zeta_.slice(k);
    auto hk = curvature.slice(k);
    for (std::size_t i = 0; i < m; ++i) {
      const float re = f[i].real() * buf[i].real() + f[i].imag() * buf[i].imag();
      // tangent * curvature * cotangent factor; both factors are 1/zeta or 2
      const float scale = magnitude ? hk[i] / (z[i] * z[i]) : 4.0f * hk[i];
      buf[i] = f[i] * (re * scale);
    }
    fft.inverse(buf, buf);
    if (has_probe(sel)) {
      for (std::size_t i = 0; i < m; ++i) gprobe[i] += std::conj(view[i]) * buf[i];
    }
    if (has_object(sel)) {
      for (std::size_t i = 0; i < m; ++i) buf[i] *= std::conj(probe_[i]);
      scatter_add(buf, g, k, gobj);
    }
  }
  const std::uint64_t terms = (has_object(sel) ? 1 : 0) + (has_probe(sel) ? 1 : 0);
  charge_cmul(counter, 2 * g.count() * m * terms);
  charge_cadd(counter, 2 * g.count() * m * terms);
  charge_fft(counter, m, 2 * g.count());
  charge_real(counter, 8 * g.count() * m);
  return merge(gobj, gprobe);
}

RealStack jvp(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background, float surrogate,
              const RIVector& v, VariableSelector sel) {
  ModelState s = state;
  s.surrogate_offset = surrogate;
  return Linearization(s, geometry, background).jvp(v, sel);
}

RIVector jtvp(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background, float surrogate,
              const RealStack& w, VariableSelector sel) {
  ModelState s = state;
  s.surrogate_offset = surrogate;
  return Linearization(s, geometry, background).jtvp(w, sel);
}

RIVector gradient(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data, float surrogate,
                  MetricKind kind, VariableSelector sel, CurvatureBasis basis) {
  ModelState s = state;
  s.surrogate_offset = surrogate;
  Linearization lin(s, geometry, data.background());
  return lin.jtvp(lin.data_gradient(data.patterns(), kind, basis), sel, basis);
}

RIVector ggn_vec(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data, float surrogate,
                 const RIVector& v, MetricKind kind, VariableSelector sel, CurvatureBasis basis) {
  ModelState s = state;
  s.surrogate_offset = surrogate;
  Linearization lin(s, geometry, data.background());
  return lin.ggn_vec(v, lin.data_curvature(data.patterns(), kind, basis), sel, basis);
}

double objective(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data, float surrogate,
                 MetricKind kind) {
  ModelState s = state;
  s.surrogate_offset = surrogate;
  return Linearization(s, geometry, data.background()).value(data.patterns(), kind);
}

}  // namespace ptycho
