#include "ptycho/pcg.hpp"

#include <algorithm>
#include <cmath>

namespace ptycho {

PcgResult pcg_solve(const LinearOperator& op, const RIVector& rhs, const RIVector& precond_diag, const RIVector& x0,
                    double eta, std::size_t max_iters) {
  const std::size_t n = op.dimension;
  if (rhs.size() != n || precond_diag.size() != n || (x0.size() != n && x0.size() != 0)) {
    throw std::invalid_argument("pcg: vector length does not match the operator dimension");
  }
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("pcg: eta must lie in (0, 1)");
  for (float d : precond_diag.values()) {
    if (!(d > 0.0f)) throw std::invalid_argument("pcg: preconditioner entries must be positive");
  }

  PcgResult result;
  const double rhs_norm = norm2(rhs.values());
  if (!std::isfinite(rhs_norm)) throw SolverError("pcg: right-hand side is not finite");
  if (rhs_norm == 0.0) {
    result.solution = RIVector(n);
    result.converged = true;
    return result;
  }
  const double target = eta * rhs_norm;

  RIVector x(n);
  RIVector r = rhs;
  if (x0.size() == n && norm2(x0.values()) > 0.0) {
    RIVector ax = op.apply(x0);
    RIVector warm_r = rhs;
    axpy(-1.0f, ax.values(), warm_r.values());
    // A warm start that does not beat x = 0 is worse than useless.
    if (norm2(warm_r.values()) < rhs_norm) {
      x = x0;
      r = std::move(warm_r);
    }
  }
  double r_norm = norm2(r.values());
  if (!std::isfinite(r_norm)) throw SolverError("pcg: residual is not finite");

  RIVector z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / precond_diag[i];
  RIVector p = z;
  double rz = dot(r.values(), z.values());

  std::size_t it = 0;
  while (r_norm > target && it < max_iters) {
    const RIVector ap = op.apply(p);
    const double pap = dot(p.values(), ap.values());
    if (!std::isfinite(pap)) throw SolverError("pcg: operator produced non-finite values");
    if (pap <= 0.0) break;
    const double alpha = rz / pap;
    axpy(static_cast<float>(alpha), p.values(), x.values());
    axpy(static_cast<float>(-alpha), ap.values(), r.values());
    ++it;
    r_norm = norm2(r.values());
    if (!std::isfinite(r_norm)) throw SolverError("pcg: residual is not finite");
    if (r_norm <= target) break;
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / precond_diag[i];
    const double rz_next = dot(r.values(), z.values());
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + static_cast<float>(beta) * p[i];
  }

  result.solution = std::move(x);
  result.iterations = it;
  result.residual_norm = r_norm;
  result.converged = r_norm <= target;
  return result;
}

double truncation_eta(double grad_norm, double beta) {
  if (!(grad_norm >= 0.0)) throw std::invalid_argument("gradient norm must be nonnegative");
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must lie in (0, 1)");
  const double eta = std::min(beta, std::sqrt(grad_norm));
  // keep strictly inside (0, 1) so the CG tolerance stays meaningful
  return std::clamp(eta, 1e-12, beta);
}

}  // namespace ptycho
