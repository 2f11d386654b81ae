#pragma once

#include <cstdint>
#include <vector>

#include "ptycho/core.hpp"
#include "ptycho/cost.hpp"
#include "ptycho/lm.hpp"
#include "ptycho/matfree.hpp"
#include "ptycho/metrics.hpp"
#include "ptycho/trace.hpp"

namespace ptycho {

/// sum_k |S_k^T P|^2 over the object grid.
RealGrid illumination_map(const ComplexGrid& probe, const ScanGeometry& geometry);
/// sum_k |S_k O|^2 over the probe grid.
RealGrid object_coverage_map(const ComplexGrid& object, const ScanGeometry& geometry);

/// One pass over all patterns in a seeded random order with concurrent object/probe updates (Gaussian metric).
/// Constraints, when given, are applied after every update.
ModelState epie_epoch(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                      std::uint64_t seed, const ConstraintSet& constraints = {}, FlopCounter* counter = nullptr);

/// Repeated epochs; the epoch seed is derived from `seed` and the epoch index.
SolverResult epie_run(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                      const ConstraintSet& constraints, std::size_t max_iters, std::uint64_t seed,
                      const Observer& observer = {});

struct NcgOptions {
  bool preconditioned = false;
  CurvatureBasis basis = CurvatureBasis::Magnitude;
  std::size_t max_iters = 100;
  double armijo = 1e-4;
  double shrink = 0.5;
  double growth = 2.0;
  std::size_t max_halvings = 30;
};

/// Polak-Ribiere (PR+) nonlinear CG on the object with Armijo backtracking.
/// The preconditioned variant weights inner products by the inverse GGN diagonal.
SolverResult ncg_run(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                     const DiffractionStack& data, MetricKind kind, const NcgOptions& options,
                     const Observer& observer = {});

/// Same iteration with an explicit diagonal preconditioner held fixed (for testing the PNCG/NCG relation).
SolverResult ncg_run_with_diagonal(const ComplexGrid& init_object, const ComplexGrid& probe,
                                   const ScanGeometry& geometry, const DiffractionStack& data, MetricKind kind,
                                   const NcgOptions& options, const RIVector& diagonal, const Observer& observer = {});

double nag_momentum(std::size_t j);
/// 1 / max sum_k |S_k^T P|^2
double nag_step(const ComplexGrid& probe, const ScanGeometry& geometry);

/// Nesterov momentum on the Gaussian metric, v <- gamma_j v - alpha grad, O <- O + v.
SolverResult nag_run(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                     const DiffractionStack& data, std::size_t max_iters, const Observer& observer = {});

struct PhebieSteps {
  double object;
  double probe;
};
PhebieSteps phebie_step_sizes(const ModelState& state, const ScanGeometry& geometry);

/// Projected block gradient steps on O then P against the magnitude-projected exit waves.
SolverResult phebie_run(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                        const ConstraintSet& constraints, std::size_t max_iters, const Observer& observer = {});

/// Lambda <- Lambda + rho (psi_hat - a)
void admm_multiplier_update(ComplexStack& multiplier, const ComplexStack& psi_hat, const ComplexStack& a, double rho);

/// 10^x for x in {-2, -1.5, ..., 1}.
std::vector<double> admm_penalty_grid();

struct AdmmDiagnostics {
  std::vector<double> primal_residual;  // ||psi_hat - A(O, P)|| after each iteration
};

SolverResult admm_run(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                      const ConstraintSet& constraints, double rho, MetricKind kind, std::size_t max_iters,
                      const Observer& observer = {}, AdmmDiagnostics* diagnostics = nullptr);

}  // namespace ptycho
