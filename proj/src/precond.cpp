#include "ptycho/precond.hpp"

#include <algorithm>
#include <vector>

#include "ptycho/forward.hpp"

namespace ptycho {
namespace {

struct Diagonals {
  RealGrid object;
  RealGrid probe;
};

// Complex-basis diagonals; either part may be skipped.
Diagonals complex_diagonals(const Linearization& lin, const RealStack& curvature, CurvatureBasis basis,
                            bool want_object, bool want_probe) {
  const auto& g = lin.geometry();
  const std::size_t m = g.probe_size();
  const auto& far = lin.far_field();
  if (!curvature.same_layout(lin.magnitudes())) throw std::invalid_argument("curvature shape does not match the scan");
  Diagonals d;
  if (want_object) d.object = RealGrid(g.object_shape());
  if (want_probe) d.probe = RealGrid(g.probe_shape());
  std::vector<float> probe_power(m);
  for (std::size_t i = 0; i < m; ++i) probe_power[i] = abs2(lin.probe()[i]);
  std::vector<cfloat> view(m);
  const double inv4m = 1.0 / (4.0 * static_cast<double>(m));
  const auto os = g.object_shape();
  for (std::size_t k = 0; k < g.count(); ++k) {
    auto hk = curvature.slice(k);
    auto fk = far.slice(k);
    double trace = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      trace += basis == CurvatureBasis::Magnitude ? hk[j] : 4.0 * hk[j] * abs2(fk[j]);
    }
    const float w = static_cast<float>(trace * inv4m);
    const auto& off = g.offset(k);
    if (want_object) {
      for (std::size_t r = 0; r < g.probe_shape().rows; ++r) {
        float* dst = d.object.values().data() + (off.row + r) * os.cols + off.col;
        const float* src = probe_power.data() + r * g.probe_shape().cols;
        for (std::size_t c = 0; c < g.probe_shape().cols; ++c) dst[c] += w * src[c];
      }
    }
    if (want_probe) {
      extract_view_into(lin.object().values(), g, k, view);
      for (std::size_t i = 0; i < m; ++i) d.probe[i] += w * abs2(view[i]);
    }
  }
  return d;
}

Linearization linearize(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                        float surrogate) {
  ModelState s = state;
  s.surrogate_offset = surrogate;
  return Linearization(s, geometry, data.background());
}

}  // namespace

RealGrid object_ggn_diag(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                         float surrogate, MetricKind kind) {
  const Linearization lin = linearize(state, geometry, data, surrogate);
  const RealStack h = lin.data_curvature(data.patterns(), kind, CurvatureBasis::Magnitude);
  return complex_diagonals(lin, h, CurvatureBasis::Magnitude, true, false).object;
}

RealGrid probe_ggn_diag(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                        float surrogate, MetricKind kind) {
  const Linearization lin = linearize(state, geometry, data, surrogate);
  const RealStack h = lin.data_curvature(data.patterns(), kind, CurvatureBasis::Magnitude);
  return complex_diagonals(lin, h, CurvatureBasis::Magnitude, false, true).probe;
}

RIVector joint_ggn_diag(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                        float surrogate, MetricKind kind) {
  RIVector d = to_real_basis(object_ggn_diag(state, geometry, data, surrogate, kind),
                             probe_ggn_diag(state, geometry, data, surrogate, kind), VariableSelector::Joint);
  apply_floor(d);
  return d;
}

RIVector ggn_diag(const Linearization& lin, const RealStack& curvature, VariableSelector sel, CurvatureBasis basis) {
  const bool obj = sel != VariableSelector::ProbeOnly;
  const bool prb = sel != VariableSelector::ObjectOnly;
  const Diagonals d = complex_diagonals(lin, curvature, basis, obj, prb);
  return to_real_basis(d.object, d.probe, sel);
}

RIVector to_real_basis(const RealGrid& object_diag, const RealGrid& probe_diag, VariableSelector sel) {
  const std::size_t no = sel != VariableSelector::ProbeOnly ? object_diag.size() : 0;
  const std::size_t np = sel != VariableSelector::ObjectOnly ? probe_diag.size() : 0;
  const std::size_t half = no + np;
  RIVector out(2 * half);
  for (std::size_t i = 0; i < no; ++i) out[i] = out[half + i] = kRealBasisFactor * object_diag[i];
  for (std::size_t i = 0; i < np; ++i) out[no + i] = out[half + no + i] = kRealBasisFactor * probe_diag[i];
  return out;
}

void apply_floor(RIVector& diag) {
  float peak = 0.0f;
  for (float v : diag.values()) peak = std::max(peak, v);
  if (!(peak > 0.0f)) {
    std::fill(diag.values().begin(), diag.values().end(), 1.0f);
    return;
  }
  const float floor = kDiagonalFloor * peak;
  for (float& v : diag.values()) v = std::max(v, floor);
}

}  // namespace ptycho
