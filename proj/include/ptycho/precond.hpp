#pragma once

#include "ptycho/core.hpp"
#include "ptycho/matfree.hpp"
#include "ptycho/metrics.hpp"

namespace ptycho {

/// Scale from the complex-basis diagonal d to each of its Re and Im entries.
/// Fixed against the dense real-basis GGN: the Re and Im diagonal entries of pixel n sum to 4 d_n,
/// and their mean is what a diagonal model can represent.
inline constexpr float kRealBasisFactor = 2.0f;

/// Entries below this fraction of the maximum are raised to it before use as scaling or preconditioner.
inline constexpr float kDiagonalFloor = 1e-8f;

/// Complex-basis diagonal d_n = (1/4M) sum_k tr(H_k) |P|^2 at the pixel of window k covering n.
RealGrid object_ggn_diag(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                         float surrogate, MetricKind kind);

/// Probe counterpart with |S_k O|^2 in place of |P|^2.
RealGrid probe_ggn_diag(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                        float surrogate, MetricKind kind);

/// [object; probe] diagonal in the joint real layout, floored.
RIVector joint_ggn_diag(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                        float surrogate, MetricKind kind);

/// Real-basis diagonal for any selector from an existing linearization (unfloored).
/// In the intensity basis the per-pixel weight is 4 H |psi_hat|^2 instead of H.
RIVector ggn_diag(const Linearization& lin, const RealStack& curvature, VariableSelector sel,
                  CurvatureBasis basis = CurvatureBasis::Magnitude);

/// Maps complex-basis diagonals to the real layout of `sel` (missing parts may be empty grids).
RIVector to_real_basis(const RealGrid& object_diag, const RealGrid& probe_diag, VariableSelector sel);

/// Raises entries below kDiagonalFloor * max to that value; an all-zero diagonal becomes all ones.
void apply_floor(RIVector& diag);

}  // namespace ptycho
