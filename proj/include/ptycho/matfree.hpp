#pragma once

#include <cstddef>

#include "ptycho/core.hpp"
#include "ptycho/cost.hpp"
#include "ptycho/metrics.hpp"

namespace ptycho {

/// Which unknowns form the real coordinate vector. Joint order is [Re O, Re P, Im O, Im P].
enum class VariableSelector { ObjectOnly, ProbeOnly, Joint };

/// Data-space variable the curvature is taken in: zeta (magnitude) or h = zeta^2 (intensity).
enum class CurvatureBasis { Magnitude, Intensity };

std::size_t variable_length(const ScanGeometry& geometry, VariableSelector sel);
RIVector pack_variables(const ModelState& state, VariableSelector sel);
/// Overwrites the selected grids of `state` with the contents of `v`.
void unpack_variables(const RIVector& v, VariableSelector sel, ModelState& state);

/// Forward pass at a fixed (object, probe), cached so that Jacobian products reuse it.
/// Changing the surrogate offset only recomputes the magnitudes.
class Linearization {
 public:
  Linearization(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background,
                FlopCounter* counter = nullptr);

  const ScanGeometry& geometry() const { return geometry_; }
  const ComplexGrid& object() const { return object_; }
  const ComplexGrid& probe() const { return probe_; }
  const ComplexStack& far_field() const { return far_; }
  const RealStack& magnitudes() const { return zeta_; }
  float surrogate() const { return surrogate_; }
  void set_surrogate(float offset);

  /// Objective minus its data-dependent floor; nonnegative, used for differences.
  double excess(const RealStack& y, MetricKind kind) const;
  double value(const RealStack& y, MetricKind kind) const;

  /// Data-space gradient and curvature in the chosen basis.
  RealStack data_gradient(const RealStack& y, MetricKind kind, CurvatureBasis basis) const;
  RealStack data_curvature(const RealStack& y, MetricKind kind, CurvatureBasis basis) const;

  RealStack jvp(const RIVector& v, VariableSelector sel, CurvatureBasis basis = CurvatureBasis::Magnitude,
                FlopCounter* counter = nullptr) const;
  RIVector jtvp(const RealStack& w, VariableSelector sel, CurvatureBasis basis = CurvatureBasis::Magnitude,
                FlopCounter* counter = nullptr) const;
  /// J^T diag(curvature) J v in one fused pass.
  RIVector ggn_vec(const RIVector& v, const RealStack& curvature, VariableSelector sel,
                   CurvatureBasis basis = CurvatureBasis::Magnitude, FlopCounter* counter = nullptr) const;

 private:
  void refresh_magnitudes();

  ScanGeometry geometry_;
  ComplexGrid object_;
  ComplexGrid probe_;
  RealGrid background_;
  float surrogate_;
  ComplexStack far_;
  RealStack zeta_;
};

// Stateless entry points; each builds a fresh linearization at `state`.
RealStack jvp(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background, float surrogate,
              const RIVector& v, VariableSelector sel);
RIVector jtvp(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background, float surrogate,
              const RealStack& w, VariableSelector sel);
RIVector gradient(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data, float surrogate,
                  MetricKind kind, VariableSelector sel, CurvatureBasis basis = CurvatureBasis::Magnitude);
RIVector ggn_vec(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data, float surrogate,
                 const RIVector& v, MetricKind kind, VariableSelector sel,
                 CurvatureBasis basis = CurvatureBasis::Magnitude);
double objective(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data, float surrogate,
                 MetricKind kind);

}  // namespace ptycho
