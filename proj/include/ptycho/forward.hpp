#pragma once

#include <cstddef>
#include <span>

#include "ptycho/core.hpp"
#include "ptycho/cost.hpp"

namespace ptycho {

/// Probe-sized window of the object at scan position k (S_k O).
ComplexGrid extract_view(const ComplexGrid& object, const ScanGeometry& geometry, std::size_t k);
void extract_view_into(std::span<const cfloat> object, const ScanGeometry& geometry, std::size_t k,
                       std::span<cfloat> view);

/// Adds `view` into `accumulator` at scan position k (S_k^T v). Returns the accumulator.
ComplexGrid& scatter_adjoint(const ComplexGrid& view, const ScanGeometry& geometry, std::size_t k,
                             ComplexGrid& accumulator);
void scatter_add(std::span<const cfloat> view, const ScanGeometry& geometry, std::size_t k,
                 std::span<cfloat> accumulator);

/// psi_k = P .* S_k O
ComplexGrid exit_wave(const ModelState& state, const ScanGeometry& geometry, std::size_t k);

/// Unitary 2D DFT.
ComplexGrid far_field(const ComplexGrid& wave);
ComplexGrid inverse_far_field(const ComplexGrid& wave);

/// h = |psi_hat|^2 + b + surrogate. Throws for a negative surrogate or nonpositive background.
RealGrid expected_intensity(const ComplexGrid& far, const RealGrid& background, float surrogate);

/// zeta = sqrt(h). Throws for nonpositive h.
RealGrid expected_magnitude(const RealGrid& intensity);

/// Far-field waves for every scan position, K x M.
ComplexStack far_field_stack(const ModelState& state, const ScanGeometry& geometry, FlopCounter* counter = nullptr);

/// zeta_k for every scan position, K x M.
RealStack forward_magnitudes(const ModelState& state, const ScanGeometry& geometry, const RealGrid& background,
                             float surrogate, FlopCounter* counter = nullptr);

/// Log-spaced offset from `initial` down to `floor` over t = 0..length-1, exactly zero from t = length on.
double surrogate_schedule(std::size_t t, std::size_t length, double initial, double floor = 1e-4);

}  // namespace ptycho
