#pragma once

#include <cstddef>
#include <functional>

#include "ptycho/core.hpp"

namespace ptycho {

/// Symmetric positive (semi)definite operator applied matrix-free.
struct LinearOperator {
  std::size_t dimension = 0;
  std::function<RIVector(const RIVector&)> apply;
};

struct PcgResult {
  RIVector solution;
  std::size_t iterations = 0;
  bool converged = false;
  double residual_norm = 0.0;
};

/// Jacobi-preconditioned CG on A x = rhs, stopping once ||A x - rhs|| <= eta ||rhs||.
/// A warm start whose residual is no better than the zero start is discarded.
PcgResult pcg_solve(const LinearOperator& op, const RIVector& rhs, const RIVector& precond_diag, const RIVector& x0,
                    double eta, std::size_t max_iters);

/// min(beta, sqrt(grad_norm)) kept inside (0, 1).
double truncation_eta(double grad_norm, double beta);

}  // namespace ptycho
