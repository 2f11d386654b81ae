#include "ptycho/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ptycho/forward.hpp"
#include "ptycho/pcg.hpp"
#include "ptycho/precond.hpp"

namespace ptycho {
namespace {

std::shared_ptr<Linearization> linearize(const ModelState& state, const ScanGeometry& geometry,
                                         const DiffractionStack& data, const std::shared_ptr<Linearization>& cache,
                                         FlopCounter* counter) {
  if (cache && cache->object() == state.object && cache->probe() == state.probe) {
    cache->set_surrogate(state.surrogate_offset);
    return cache;
  }
  return std::make_shared<Linearization>(state, geometry, data.background(), counter);
}

double excess(const Linearization& lin, const DiffractionStack& data, MetricKind kind, FlopCounter* counter) {
  charge_real(counter, 6 * data.patterns().size());
  return lin.excess(data.patterns(), kind);
}

void project_entry(float& re, float& im, float bound) {
  const float mag = std::hypot(re, im);
  if (mag > bound) {
    const float s = bound / mag;
    re *= s;
    im *= s;
  }
}

// Projection in the packed real layout of `sel`.
void project_packed(RIVector& v, const ConstraintSet& c, VariableSelector sel, std::size_t n_obj) {
  const std::size_t half = v.half();
  const std::size_t no = sel == VariableSelector::ProbeOnly ? 0 : n_obj;
  if (c.object_bound && no > 0) {
    for (std::size_t i = 0; i < no; ++i) project_entry(v[i], v[half + i], *c.object_bound);
  }
  if (c.probe_bound && sel != VariableSelector::ObjectOnly) {
    for (std::size_t i = no; i < half; ++i) project_entry(v[i], v[half + i], *c.probe_bound);
  }
}

float surrogate_at(const LMConfig& config, std::size_t t) {
  if (!config.surrogate) return 0.0f;
  const auto& s = *config.surrogate;
  return static_cast<float>(surrogate_schedule(t, s.length, s.initial, s.floor));
}

}  // namespace

LMConfig LMConfig::defaults(MetricKind kind) {
  LMConfig c;
  c.beta = kind == MetricKind::Gaussian ? 0.1 : 0.9;
  return c;
}

LMConfig LMConfig::preconditioned_defaults(MetricKind kind) {
  LMConfig c = defaults(kind);
  c.scaling = Scaling::GGNDiag;
  c.preconditioned = true;
  return c;
}

void LMConfig::validate() const {
  if (!(mu_min > 0.0 && mu0 > mu_min)) throw ConfigError("LM requires mu0 > mu_min > 0");
  if (!(kappa > 1.0)) throw ConfigError("LM requires kappa > 1");
  if (!(nu >= 1.0 && nu <= 2.0)) throw ConfigError("LM requires nu in [1, 2]");
  if (!(rho_min > 0.0 && rho_min < 0.25)) throw ConfigError("LM requires 0 < rho_min < 0.25");
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("LM requires beta in (0, 1)");
  if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("LM requires sigma in (0, 1)");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("LM requires gamma in (0, 1)");
  if (!(tau_s > 0.0 && tau_s < 1.0)) throw ConfigError("LM requires tau_s in (0, 1)");
  if (!(p_s > 1.0)) throw ConfigError("LM requires p_s > 1");
  if (max_cg == 0) throw ConfigError("LM requires at least one CG iteration per solve");
  if (!(reduction_tol >= 0.0)) throw ConfigError("LM reduction tolerance must be >= 0");
  if (surrogate) {
    if (surrogate->length == 0 || !(surrogate->initial > 0.0) || !(surrogate->floor > 0.0)) {
      throw ConfigError("surrogate schedule needs length >= 1 and positive offsets");
    }
  }
}

ConstraintSet ConstraintSet::standard() { return {1.0f, 1e8f}; }

ComplexGrid project_magnitude(const ComplexGrid& grid, float bound) {
  ComplexGrid out = grid;
  project_in_place(out, bound);
  return out;
}

void project_in_place(ComplexGrid& grid, float bound) {
  if (!(bound > 0.0f)) throw std::invalid_argument("projection bound must be positive");
  for (auto& z : grid.values()) {
    float re = z.real();
    float im = z.imag();
    project_entry(re, im, bound);
    z = {re, im};
  }
}

void project_object(ComplexGrid& object, const ConstraintSet& constraints) {
  if (constraints.object_bound) project_in_place(object, *constraints.object_bound);
}

void project_probe(ComplexGrid& probe, const ConstraintSet& constraints) {
  if (constraints.probe_bound) project_in_place(probe, *constraints.probe_bound);
}

void project_state(ModelState& state, const ConstraintSet& constraints, VariableSelector sel) {
  if (sel != VariableSelector::ProbeOnly) project_object(state.object, constraints);
  if (sel != VariableSelector::ObjectOnly) project_probe(state.probe, constraints);
}

bool is_feasible(const ModelState& state, const ConstraintSet& constraints, double slack) {
  const auto within = [slack](const ComplexGrid& g, float bound) {
    return std::sqrt(max_abs2(g.values())) <= bound * (1.0 + slack);
  };
  if (constraints.object_bound && !within(state.object, *constraints.object_bound)) return false;
  if (constraints.probe_bound && !within(state.probe, *constraints.probe_bound)) return false;
  return true;
}

double lm_lambda(double mu, double data_grad_norm, double nu, Scaling scaling) {
  if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
  if (scaling == Scaling::GGNDiag) return mu;
  return mu * std::pow(data_grad_norm, nu);
}

ProjectedStepResult projected_step(const RIVector& z, const RIVector& step, const RIVector& grad, double f0,
                                   const PointObjective& f, const Projector& project, const LMConfig& config,
                                   std::optional<double> trial_f) {
  if (z.size() != step.size() || z.size() != grad.size()) throw std::invalid_argument("projected step: length mismatch");
  RIVector zp = z;
  axpy(1.0f, step.values(), zp.values());
  project(zp);
  const double fp = trial_f ? *trial_f : f(zp);
  if (fp < config.gamma * f0) return {zp, fp, 0, false, 1};

  RIVector s = zp;
  axpy(-1.0f, z.values(), s.values());
  const double s_norm = norm2(s.values());
  const bool along_step = dot(grad.values(), s.values()) <= -config.tau_s * std::pow(s_norm, config.p_s);
  RIVector dir = s;
  if (!along_step) {
    dir = grad;
    for (float& v : dir.values()) v = -v;
  }
  const double dir_norm2 = dot(dir.values(), dir.values());
  const int branch = along_step ? 2 : 3;

  ProjectedStepResult result{z, f0, 0, true, branch};
  double alpha = 1.0;
  for (std::size_t h = 0; h <= config.max_halvings; ++h) {
    RIVector cand = z;
    axpy(static_cast<float>(alpha), dir.values(), cand.values());
    project(cand);
    const double fc = (along_step && h == 0) ? fp : f(cand);
    ++result.ls_iters;
    if (std::isfinite(fc) && fc <= f0 - config.sigma * alpha * dir_norm2) {
      result.point = std::move(cand);
      result.f = fc;
      result.failed = false;
      return result;
    }
    alpha *= 0.5;
  }
  return result;
}

LmStep lm_iteration(ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                    const LMConfig& config, const ConstraintSet& constraints, VariableSelector sel, MetricKind kind,
                    LmProgress& progress, FlopCounter* counter) {
  LmStep step;
  const float offset = surrogate_at(config, progress.iteration);
  ++progress.iteration;
  state.surrogate_offset = offset;
  step.surrogate = offset;

  auto lin = linearize(state, geometry, data, progress.cache, counter);
  progress.cache = lin;
  const auto& y = data.patterns();
  const double f0 = excess(*lin, data, kind, counter);
  if (!std::isfinite(f0)) throw SolverError("objective is not finite; the iteration diverged");
  step.f_before = step.f_after = f0;

  const RealStack w = lin->data_gradient(y, kind, config.basis);
  const RIVector g = lin->jtvp(w, sel, config.basis, counter);
  const double g_norm = norm2(g.values());
  if (!std::isfinite(g_norm)) throw SolverError("gradient is not finite; the iteration diverged");
  step.grad_norm = g_norm;
  if (g_norm == 0.0) {
    step.converged = true;
    return step;
  }

  const RealStack curvature = lin->data_curvature(y, kind, config.basis);
  RIVector diag = ggn_diag(*lin, curvature, sel, config.basis);
  charge_real(counter, 4 * y.size());
  apply_floor(diag);
  const std::size_t n = g.size();
  const RIVector scale = config.scaling == Scaling::GGNDiag ? diag : RIVector(n, 1.0f);
  const double w_norm = norm2(w.values());
  RIVector rhs = g;
  for (float& v : rhs.values()) v = -v;
  const double eta = truncation_eta(g_norm, config.beta);
  const RIVector z = pack_variables(state, sel);
  if (progress.warm_start.size() != n) progress.warm_start = RIVector(n);

  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
    const double lambda = lm_lambda(progress.mu, w_norm, config.nu, config.scaling);
    step.lambda = lambda;
    ++step.lambda_updates;
    RIVector precond(n, 1.0f);
    if (config.preconditioned) {
      for (std::size_t i = 0; i < n; ++i) precond[i] = static_cast<float>(diag[i] + lambda * scale[i]);
    }
    const LinearOperator op{n, [&](const RIVector& v) {
                              RIVector out = lin->ggn_vec(v, curvature, sel, config.basis, counter);
                              for (std::size_t i = 0; i < n; ++i) out[i] += static_cast<float>(lambda * scale[i]) * v[i];
                              charge_real(counter, 2 * n);
                              return out;
                            }};
    const PcgResult solve = pcg_solve(op, rhs, precond, progress.warm_start, eta, config.max_cg);
    charge_real(counter, 10 * n * solve.iterations);
    step.cg_iters += solve.iterations;
    const RIVector& delta = solve.solution;

    const RIVector g_delta = lin->ggn_vec(delta, curvature, sel, config.basis, counter);
    const double predicted = -(dot(g.values(), delta.values()) + 0.5 * dot(delta.values(), g_delta.values()));
    if (predicted <= config.reduction_tol * f0) {
      // The quadratic model has nothing left to offer at this damping.
      if (predicted > 0.0 || attempt == 0) {
        if (offset == 0.0f) (attempt == 0 ? step.converged : step.stagnated) = true;
        return step;
      }
      progress.mu *= config.kappa;
      continue;
    }

    // The gain ratio judges the quadratic model at the unprojected trial point; feasibility is restored by the
    // projected acceptance below.
    RIVector zt = z;
    axpy(1.0f, delta.values(), zt.values());
    ModelState trial = state;
    unpack_variables(zt, sel, trial);
    auto trial_lin = std::make_shared<Linearization>(trial, geometry, data.background(), counter);
    const double f1 = excess(*trial_lin, data, kind, counter);
    const double rho = std::isfinite(f1) ? (f0 - f1) / predicted : -std::numeric_limits<double>::infinity();
    step.rho = rho;

    if (!(rho > config.rho_min)) {
      progress.mu *= config.kappa;
      continue;
    }
    if (rho > 0.75) {
      progress.mu = std::max(progress.mu / config.kappa, config.mu_min);
    } else if (rho <= 0.25) {
      progress.mu *= config.kappa;
    }

    if (constraints.empty()) {
      state.object = std::move(trial.object);
      state.probe = std::move(trial.probe);
      step.f_after = f1;
      progress.cache = trial_lin;
    } else {
      const PointObjective objective = [&](const RIVector& p) {
        ModelState s = state;
        unpack_variables(p, sel, s);
        return excess(Linearization(s, geometry, data.background(), counter), data, kind, counter);
      };
      const Projector project = [&](RIVector& p) { project_packed(p, constraints, sel, geometry.object_size()); };
      RIVector zp = zt;
      project(zp);
      const bool inside = zp == zt;
      const ProjectedStepResult r =
          projected_step(z, delta, g, f0, objective, project, config, inside ? std::optional(f1) : std::nullopt);
      step.ls_iters = r.ls_iters;
      if (r.failed) {
        step.stagnated = true;
        return step;
      }
      unpack_variables(r.point, sel, state);
      step.f_after = r.f;
      progress.cache = inside && r.point == zt ? trial_lin : nullptr;
    }
    progress.warm_start = delta;
    step.accepted = true;
    return step;
  }
  step.stagnated = true;
  return step;
}

namespace {

TraceRow initial_row(ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                     const LMConfig& config, MetricKind kind, LmProgress& progress, FlopCounter& counter) {
  state.surrogate_offset = surrogate_at(config, 0);
  progress.cache = std::make_shared<Linearization>(state, geometry, data.background(), &counter);
  TraceRow row;
  row.iteration = 0;
  row.f = row.f_before = progress.cache->value(data.patterns(), kind);
  row.cumulative_flops = counter.total();
  return row;
}

SolverResult run_single(ModelState state, const ScanGeometry& geometry, const DiffractionStack& data,
                        const LMConfig& config, const ConstraintSet& constraints, VariableSelector sel,
                        MetricKind kind, const Observer& observer) {
  config.validate();
  state.validate(geometry);
  if (!constraints.empty()) project_state(state, constraints, sel);
  FlopCounter counter;
  LmProgress progress(config);
  const double floor = metric_floor(data.patterns().values(), kind);
  SolverResult result;
  TraceRow row0 = initial_row(state, geometry, data, config, kind, progress, counter);
  if (observer) observer(state, row0);
  result.trace.append(row0);

  for (std::size_t t = 1; t <= config.max_outer; ++t) {
    const LmStep step = lm_iteration(state, geometry, data, config, constraints, sel, kind, progress, &counter);
    TraceRow row;
    row.iteration = t;
    row.f = step.f_after + floor;
    row.f_before = step.f_before + floor;
    row.lambda = step.lambda;
    row.cg_iters = step.cg_iters;
    row.lambda_updates = step.lambda_updates;
    row.ls_iters = step.ls_iters;
    row.cumulative_flops = counter.total();
    if (observer) observer(state, row);
    result.trace.append(row);
    if (step.surrogate == 0.0f && step.converged) {
      result.stop = StopReason::Converged;
      break;
    }
    if (step.surrogate == 0.0f && step.stagnated) {
      result.stop = StopReason::Stagnated;
      break;
    }
  }
  result.state = std::move(state);
  return result;
}

}  // namespace

SolverResult lm_run_spr(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                        const DiffractionStack& data, const LMConfig& config, MetricKind kind,
                        const Observer& observer) {
  ModelState state{init_object, probe};
  state.optimize_object = true;
  state.optimize_probe = false;
  return run_single(std::move(state), geometry, data, config, {}, VariableSelector::ObjectOnly, kind, observer);
}

SolverResult lm_run_bpr_joint(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                              const LMConfig& config, const ConstraintSet& constraints, MetricKind kind,
                              const Observer& observer) {
  if (!config.preconditioned || config.scaling != Scaling::GGNDiag) {
    throw ConfigError(
        "joint object/probe LM requires GGN-diagonal scaling and preconditioning: the object and probe blocks are "
        "scaled too differently for an unpreconditioned solve to converge");
  }
  ModelState state = init;
  state.optimize_object = state.optimize_probe = true;
  return run_single(std::move(state), geometry, data, config, constraints, VariableSelector::Joint, kind, observer);
}

SolverResult lm_run_bpr_alternating(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                                    const LMConfig& config, const ConstraintSet& constraints, MetricKind kind,
                                    const Observer& observer) {
  config.validate();
  ModelState state = init;
  state.validate(geometry);
  state.optimize_object = state.optimize_probe = true;
  if (!constraints.empty()) project_state(state, constraints, VariableSelector::Joint);
  FlopCounter counter;
  LmProgress object_progress(config);
  LmProgress probe_progress(config);
  const double floor = metric_floor(data.patterns().values(), kind);
  SolverResult result;
  TraceRow row0 = initial_row(state, geometry, data, config, kind, object_progress, counter);
  if (observer) observer(state, row0);
  result.trace.append(row0);

  for (std::size_t t = 1; t <= config.max_outer; ++t) {
    const LmStep obj = lm_iteration(state, geometry, data, config, constraints, VariableSelector::ObjectOnly, kind,
                                     object_progress, &counter);
    probe_progress.cache = object_progress.cache;
    const LmStep prb = lm_iteration(state, geometry, data, config, constraints, VariableSelector::ProbeOnly, kind,
                                    probe_progress, &counter);
    object_progress.cache = probe_progress.cache;
    TraceRow row;
    row.iteration = t;
    row.f_before = obj.f_before + floor;
    row.f = (prb.f_after + floor);
    row.lambda = obj.lambda;
    row.cg_iters = obj.cg_iters + prb.cg_iters;
    row.lambda_updates = obj.lambda_updates + prb.lambda_updates;
    row.ls_iters = obj.ls_iters + prb.ls_iters;
    row.cumulative_flops = counter.total();
    if (observer) observer(state, row);
    result.trace.append(row);
    const bool done_o = obj.converged || obj.stagnated;
    const bool done_p = prb.converged || prb.stagnated;
    if (obj.surrogate == 0.0f && done_o && done_p) {
      result.stop = obj.converged && prb.converged ? StopReason::Converged : StopReason::Stagnated;
      break;
    }
  }
  result.state = std::move(state);
  return result;
}

}  // namespace ptycho
