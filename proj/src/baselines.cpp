#include "ptycho/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "ptycho/fft.hpp"
#include "ptycho/forward.hpp"
#include "ptycho/precond.hpp"

namespace ptycho {
namespace {

// Denominators below this fraction of their maximum leave the pixel unchanged in closed-form updates.
constexpr double kDenominatorFloor = 1e-8;

double excess_of(const Linearization& lin, const DiffractionStack& data, MetricKind kind, FlopCounter* counter) {
  charge_real(counter, 6 * data.patterns().size());
  const double f = lin.excess(data.patterns(), kind);
  if (!std::isfinite(f)) throw SolverError("objective is not finite; the iteration diverged");
  return f;
}

RIVector object_gradient(const Linearization& lin, const DiffractionStack& data, MetricKind kind,
                         CurvatureBasis basis, FlopCounter* counter) {
  charge_real(counter, 4 * data.patterns().size());
  return lin.jtvp(lin.data_gradient(data.patterns(), kind, basis), VariableSelector::ObjectOnly, basis, counter);
}

std::shared_ptr<Linearization> linearize(const ModelState& state, const ScanGeometry& geometry,
                                         const DiffractionStack& data, FlopCounter* counter) {
  return std::make_shared<Linearization>(state, geometry, data.background(), counter);
}

// Shared bookkeeping for the first-order solvers: rows carry the full objective (excess + floor).
class Recorder {
 public:
  Recorder(const DiffractionStack& data, MetricKind kind, const Observer& observer)
      : floor_(metric_floor(data.patterns().values(), kind)), observer_(observer) {}

  FlopCounter* counter() { return &counter_; }

  void record(const ModelState& state, std::size_t iteration, double f_excess, double f_before_excess,
              std::size_t ls_iters = 0) {
    TraceRow row;
    row.iteration = iteration;
    row.f = f_excess + floor_;
    row.f_before = f_before_excess + floor_;
    row.ls_iters = ls_iters;
    row.cumulative_flops = counter_.total();
    if (observer_) observer_(state, row);
    trace_.append(row);
  }

  SolverResult finish(ModelState state, StopReason stop) {
    SolverResult r;
    r.state = std::move(state);
    r.trace = std::move(trace_);
    r.stop = stop;
    return r;
  }

 private:
  FlopCounter counter_;
  double floor_;
  const Observer& observer_;
  ConvergenceTrace trace_;
};

void require_finite(std::span<const cfloat> values, const char* what) {
  for (const cfloat& z : values) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
      throw SolverError(std::string(what) + " is not finite; the iteration diverged");
    }
  }
}

void require_finite(const RIVector& v, const char* what) {
  if (!all_finite(v.values())) throw SolverError(std::string(what) + " is not finite; the iteration diverged");
}

double max_of(const RealGrid& g) {
  double m = 0.0;
  for (float v : g.values()) m = std::max(m, static_cast<double>(v));
  return m;
}

// Closed-form minimizer of sum_k w_k |z - c_k|^2 per pixel given num = sum w c and den = sum w.
void ratio_update(ComplexGrid& target, const std::vector<cfloat>& num, const std::vector<double>& den) {
  const double peak = *std::max_element(den.begin(), den.end());
  if (!(peak > 0.0)) return;
  for (std::size_t i = 0; i < den.size(); ++i) {
    if (den[i] > kDenominatorFloor * peak) target[i] = num[i] / static_cast<float>(den[i]);
  }
}

}  // namespace

RealGrid illumination_map(const ComplexGrid& probe, const ScanGeometry& geometry) {
  if (probe.shape() != geometry.probe_shape()) throw std::invalid_argument("probe shape does not match the geometry");
  RealGrid out(geometry.object_shape());
  const std::size_t cols = geometry.object_shape().cols;
  const Shape ps = geometry.probe_shape();
  for (const Offset& o : geometry.offsets()) {
    for (std::size_t r = 0; r < ps.rows; ++r) {
      for (std::size_t c = 0; c < ps.cols; ++c) out[(o.row + r) * cols + o.col + c] += abs2(probe(r, c));
    }
  }
  return out;
}

RealGrid object_coverage_map(const ComplexGrid& object, const ScanGeometry& geometry) {
  if (object.shape() != geometry.object_shape()) throw std::invalid_argument("object shape does not match the geometry");
  RealGrid out(geometry.probe_shape());
  std::vector<cfloat> view(geometry.probe_size());
  for (std::size_t k = 0; k < geometry.count(); ++k) {
    extract_view_into(object.values(), geometry, k, view);
    for (std::size_t i = 0; i < view.size(); ++i) out[i] += abs2(view[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------------------------
// ePIE

ModelState epie_epoch(const ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                      std::uint64_t seed, const ConstraintSet& constraints, FlopCounter* counter) {
  state.validate(geometry);
  if (data.count() != geometry.count() || data.patterns().slice_shape() != geometry.probe_shape()) {
    throw std::invalid_argument("data do not match the scan geometry");
  }
  ModelState out = state;
  const std::size_t m = geometry.probe_size();
  std::vector<std::size_t> order(geometry.count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(sseq);
  std::shuffle(order.begin(), order.end(), rng);

  UnitaryFft2d fft(geometry.probe_shape());
  std::vector<cfloat> view(m), wave(m), chi(m);
  const auto bg = data.background().values();
  for (std::size_t k : order) {
    extract_view_into(out.object.values(), geometry, k, view);
    const double probe_peak = max_abs2(out.probe.values());
    const double view_peak = max_abs2(view);
    if (probe_peak == 0.0 && view_peak == 0.0) {
      throw SolverError("ePIE step sizes are undefined: probe and object view are both zero");
    }
    for (std::size_t i = 0; i < m; ++i) wave[i] = out.probe[i] * view[i];
    fft.forward(wave, wave);
    const auto y = data.patterns().slice(k);
    for (std::size_t i = 0; i < m; ++i) {
      const float zeta = std::sqrt(abs2(wave[i]) + bg[i] + state.surrogate_offset);
      wave[i] *= pixel::grad_magnitude(zeta, y[i], MetricKind::Gaussian) / zeta;
    }
    fft.inverse(wave, chi);
    charge_fft(counter, m, 2);
    charge_cmul(counter, 5 * m);
    charge_real(counter, 8 * m);

    if (out.optimize_object && probe_peak > 0.0) {
      const float alpha = static_cast<float>(1.0 / probe_peak);
      for (std::size_t i = 0; i < m; ++i) wave[i] = -alpha * std::conj(out.probe[i]) * chi[i];
      scatter_add(wave, geometry, k, out.object.values());
    }
    if (out.optimize_probe && view_peak > 0.0) {
      const float gamma = static_cast<float>(1.0 / view_peak);
      for (std::size_t i = 0; i < m; ++i) out.probe[i] -= gamma * std::conj(view[i]) * chi[i];
    }
    if (!constraints.empty()) {
      project_state(out, constraints,
                    out.optimize_probe ? (out.optimize_object ? VariableSelector::Joint : VariableSelector::ProbeOnly)
                                       : VariableSelector::ObjectOnly);
    }
  }
  require_finite(out.object.values(), "object");
  require_finite(out.probe.values(), "probe");
  return out;
}

SolverResult epie_run(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                      const ConstraintSet& constraints, std::size_t max_iters, std::uint64_t seed,
                      const Observer& observer) {
  init.validate(geometry);
  Recorder rec(data, MetricKind::Gaussian, observer);
  ModelState state = init;
  state.surrogate_offset = 0.0f;
  if (!constraints.empty()) project_state(state, constraints, VariableSelector::Joint);
  // The objective is reported for diagnostics only and is not charged to the algorithm.
  double f = Linearization(state, geometry, data.background()).excess(data.patterns(), MetricKind::Gaussian);
  rec.record(state, 0, f, f);
  for (std::size_t t = 1; t <= max_iters; ++t) {
    const std::uint64_t epoch_seed = seed * 0x9E3779B97F4A7C15ull + t;
    state = epie_epoch(state, geometry, data, epoch_seed, constraints, rec.counter());
    const double before = f;
    f = Linearization(state, geometry, data.background()).excess(data.patterns(), MetricKind::Gaussian);
    rec.record(state, t, f, before);
  }
  return rec.finish(std::move(state), StopReason::IterationLimit);
}

// ---------------------------------------------------------------------------------------------------------------
// Nonlinear conjugate gradients

namespace {

RIVector inverse_of(const RIVector& diag) {
  RIVector inv(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) inv[i] = 1.0f / diag[i];
  return inv;
}

RIVector floored_object_diag(const Linearization& lin, const DiffractionStack& data, MetricKind kind,
                             CurvatureBasis basis, FlopCounter* counter) {
  RIVector d = ggn_diag(lin, lin.data_curvature(data.patterns(), kind, basis), VariableSelector::ObjectOnly, basis);
  charge_real(counter, 4 * data.patterns().size());
  apply_floor(d);
  return d;
}

double weighted_dot(const RIVector& a, const RIVector& w, const RIVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * w[i] * b[i];
  return s;
}

SolverResult ncg_impl(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                      const DiffractionStack& data, MetricKind kind, const NcgOptions& options,
                      const RIVector* fixed_diagonal, const Observer& observer) {
  if (!(options.armijo > 0.0 && options.armijo < 1.0) || !(options.shrink > 0.0 && options.shrink < 1.0) ||
      !(options.growth >= 1.0)) {
    throw ConfigError("NCG line search constants out of range");
  }
  ModelState state{init_object, probe};
  state.validate(geometry);
  const VariableSelector sel = VariableSelector::ObjectOnly;
  Recorder rec(data, kind, observer);
  FlopCounter* counter = rec.counter();
  const bool refresh = options.preconditioned && !fixed_diagonal;

  auto lin = linearize(state, geometry, data, counter);
  double f = excess_of(*lin, data, kind, counter);
  rec.record(state, 0, f, f);

  RIVector g = object_gradient(*lin, data, kind, options.basis, counter);
  require_finite(g, "gradient");
  // The trial-step scale is taken in the magnitude basis so that both formulations start identically.
  const RIVector curvature_scale = floored_object_diag(*lin, data, kind, CurvatureBasis::Magnitude, counter);
  if (fixed_diagonal && fixed_diagonal->size() != g.size()) {
    throw std::invalid_argument("preconditioner length does not match the object");
  }
  RIVector minv(g.size(), 1.0f);
  if (fixed_diagonal) {
    minv = inverse_of(*fixed_diagonal);
  } else if (options.preconditioned) {
    minv = options.basis == CurvatureBasis::Magnitude
               ? inverse_of(curvature_scale)
               : inverse_of(floored_object_diag(*lin, data, kind, options.basis, counter));
  }
  // First trial step: inverse of the largest preconditioned curvature estimate.
  double peak = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) peak = std::max(peak, static_cast<double>(curvature_scale[i]) * minv[i]);
  double alpha = 1.0 / peak / options.growth;

  RIVector d(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) d[i] = -minv[i] * g[i];
  double gmg = weighted_dot(g, minv, g);
  if (gmg == 0.0) return rec.finish(std::move(state), StopReason::Converged);

  RIVector x = pack_variables(state, sel);
  for (std::size_t t = 1; t <= options.max_iters; ++t) {
    double slope = dot(g.values(), d.values());
    if (!(slope < 0.0)) {
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = -minv[i] * g[i];
      slope = -gmg;
    }
    alpha *= options.growth;
    bool found = false;
    std::size_t ls = 0;
    std::shared_ptr<Linearization> trial_lin;
    ModelState trial = state;
    double f_trial = f;
    RIVector xc;
    for (std::size_t h = 0; h <= options.max_halvings; ++h) {
      xc = x;
      axpy(static_cast<float>(alpha), d.values(), xc.values());
      unpack_variables(xc, sel, trial);
      trial_lin = linearize(trial, geometry, data, counter);
      ++ls;
      f_trial = trial_lin->excess(data.patterns(), kind);
      charge_real(counter, 6 * data.patterns().size());
      if (std::isfinite(f_trial) && f_trial <= f + options.armijo * alpha * slope) {
        found = true;
        break;
      }
      alpha *= options.shrink;
    }
    if (!found) {
      rec.record(state, t, f, f, ls);
      return rec.finish(std::move(state), StopReason::Stagnated);
    }
    const double before = f;
    x = std::move(xc);
    state = std::move(trial);
    lin = trial_lin;
    f = f_trial;

    RIVector g_new = object_gradient(*lin, data, kind, options.basis, counter);
    require_finite(g_new, "gradient");
    if (refresh) minv = inverse_of(floored_object_diag(*lin, data, kind, options.basis, counter));
    double num = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) num += static_cast<double>(g_new[i]) * minv[i] * (g_new[i] - g[i]);
    const double beta = std::max(0.0, num / gmg);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] = static_cast<float>(-minv[i] * g_new[i] + beta * d[i]);
    charge_real(counter, 8 * g.size());
    g = std::move(g_new);
    gmg = weighted_dot(g, minv, g);
    rec.record(state, t, f, before, ls);
    if (gmg == 0.0) return rec.finish(std::move(state), StopReason::Converged);
  }
  return rec.finish(std::move(state), StopReason::IterationLimit);
}

}  // namespace

SolverResult ncg_run(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                     const DiffractionStack& data, MetricKind kind, const NcgOptions& options,
                     const Observer& observer) {
  return ncg_impl(init_object, probe, geometry, data, kind, options, nullptr, observer);
}

SolverResult ncg_run_with_diagonal(const ComplexGrid& init_object, const ComplexGrid& probe,
                                   const ScanGeometry& geometry, const DiffractionStack& data, MetricKind kind,
                                   const NcgOptions& options, const RIVector& diagonal, const Observer& observer) {
  for (float v : diagonal.values()) {
    if (!(v > 0.0f)) throw std::invalid_argument("preconditioner entries must be positive");
  }
  return ncg_impl(init_object, probe, geometry, data, kind, options, &diagonal, observer);
}

// ---------------------------------------------------------------------------------------------------------------
// Nesterov momentum

double nag_momentum(std::size_t j) { return static_cast<double>(j + 2) / static_cast<double>(j + 5); }

double nag_step(const ComplexGrid& probe, const ScanGeometry& geometry) {
  const double peak = max_of(illumination_map(probe, geometry));
  if (!(peak > 0.0)) throw SolverError("step size undefined: the probe illuminates nothing");
  return 1.0 / peak;
}

SolverResult nag_run(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                     const DiffractionStack& data, std::size_t max_iters, const Observer& observer) {
  constexpr MetricKind kind = MetricKind::Gaussian;
  ModelState state{init_object, probe};
  state.validate(geometry);
  Recorder rec(data, kind, observer);
  FlopCounter* counter = rec.counter();
  const float alpha = static_cast<float>(nag_step(probe, geometry));
  auto lin = linearize(state, geometry, data, counter);
  double f = excess_of(*lin, data, kind, counter);
  rec.record(state, 0, f, f);

  RIVector x = pack_variables(state, VariableSelector::ObjectOnly);
  RIVector v(x.size());
  for (std::size_t j = 0; j < max_iters; ++j) {
    const RIVector g = object_gradient(*lin, data, kind, CurvatureBasis::Magnitude, counter);
    require_finite(g, "gradient");
    const float gamma = static_cast<float>(nag_momentum(j));
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = gamma * v[i] - alpha * g[i];
      x[i] += v[i];
    }
    charge_real(counter, 4 * v.size());
    unpack_variables(x, VariableSelector::ObjectOnly, state);
    lin = linearize(state, geometry, data, counter);
    const double before = f;
    f = excess_of(*lin, data, kind, counter);
    rec.record(state, j + 1, f, before);
  }
  return rec.finish(std::move(state), StopReason::IterationLimit);
}

// ---------------------------------------------------------------------------------------------------------------
// PHeBIE

PhebieSteps phebie_step_sizes(const ModelState& state, const ScanGeometry& geometry) {
  const double illum = max_of(illumination_map(state.probe, geometry));
  const double cover = max_of(object_coverage_map(state.object, geometry));
  return {illum > 0.0 ? 1.0 / illum : 0.0, cover > 0.0 ? 1.0 / cover : 0.0};
}

SolverResult phebie_run(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                        const ConstraintSet& constraints, std::size_t max_iters, const Observer& observer) {
  constexpr MetricKind kind = MetricKind::Gaussian;
  init.validate(geometry);
  Recorder rec(data, kind, observer);
  FlopCounter* counter = rec.counter();
  ModelState state = init;
  state.surrogate_offset = 0.0f;
  if (!constraints.empty()) project_state(state, constraints, VariableSelector::Joint);
  const std::size_t m = geometry.probe_size();
  const std::size_t kk = geometry.count();
  UnitaryFft2d fft(geometry.probe_shape());

  auto lin = linearize(state, geometry, data, counter);
  double f = excess_of(*lin, data, kind, counter);
  rec.record(state, 0, f, f);

  ComplexStack target(kk, geometry.probe_shape());
  std::vector<cfloat> view(m), buf(m);
  for (std::size_t t = 1; t <= max_iters; ++t) {
    // Exit waves with measured magnitudes and model phases.
    for (std::size_t k = 0; k < kk; ++k) {
      const auto far = lin->far_field().slice(k);
      const auto zeta = lin->magnitudes().slice(k);
      const auto y = data.patterns().slice(k);
      auto out = target.slice(k);
      for (std::size_t i = 0; i < m; ++i) out[i] = far[i] * (std::sqrt(y[i]) / zeta[i]);
      fft.inverse(out, out);
    }
    charge_fft(counter, m, kk);
    charge_cmul(counter, kk * m);
    charge_real(counter, 3 * kk * m);

    const PhebieSteps steps = phebie_step_sizes(state, geometry);
    if (state.optimize_object && steps.object > 0.0) {
      std::vector<cfloat> grad(geometry.object_size());
      for (std::size_t k = 0; k < kk; ++k) {
        extract_view_into(state.object.values(), geometry, k, view);
        const auto tk = target.slice(k);
        for (std::size_t i = 0; i < m; ++i) buf[i] = std::conj(state.probe[i]) * (state.probe[i] * view[i] - tk[i]);
        scatter_add(buf, geometry, k, grad);
      }
      const float a = static_cast<float>(steps.object);
      for (std::size_t i = 0; i < grad.size(); ++i) state.object[i] -= a * grad[i];
      project_object(state.object, constraints);
      charge_cmul(counter, 2 * kk * m);
      charge_cadd(counter, 2 * kk * m + grad.size());
    }
    if (state.optimize_probe && steps.probe > 0.0) {
      std::vector<cfloat> grad(m);
      for (std::size_t k = 0; k < kk; ++k) {
        extract_view_into(state.object.values(), geometry, k, view);
        const auto tk = target.slice(k);
        for (std::size_t i = 0; i < m; ++i) grad[i] += std::conj(view[i]) * (state.probe[i] * view[i] - tk[i]);
      }
      const float a = static_cast<float>(steps.probe);
      for (std::size_t i = 0; i < m; ++i) state.probe[i] -= a * grad[i];
      project_probe(state.probe, constraints);
      charge_cmul(counter, 2 * kk * m);
      charge_cadd(counter, 2 * kk * m + m);
    }
    require_finite(state.object.values(), "object");
    require_finite(state.probe.values(), "probe");
    lin = linearize(state, geometry, data, counter);
    const double before = f;
    f = excess_of(*lin, data, kind, counter);
    rec.record(state, t, f, before);
  }
  return rec.finish(std::move(state), StopReason::IterationLimit);
}

// ---------------------------------------------------------------------------------------------------------------
// ADMM

void admm_multiplier_update(ComplexStack& multiplier, const ComplexStack& psi_hat, const ComplexStack& a, double rho) {
  if (!multiplier.same_layout(psi_hat) || !multiplier.same_layout(a)) {
    throw std::invalid_argument("multiplier update: stack layouts differ");
  }
  const float r = static_cast<float>(rho);
  for (std::size_t i = 0; i < multiplier.size(); ++i) multiplier[i] += r * (psi_hat[i] - a[i]);
}

std::vector<double> admm_penalty_grid() {
  std::vector<double> out;
  for (int i = -4; i <= 2; ++i) out.push_back(std::pow(10.0, 0.5 * i));
  return out;
}

SolverResult admm_run(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                      const ConstraintSet& constraints, double rho, MetricKind kind, std::size_t max_iters,
                      const Observer& observer, AdmmDiagnostics* diagnostics) {
  if (!(rho > 0.0)) throw ConfigError("ADMM penalty must be positive");
  init.validate(geometry);
  Recorder rec(data, kind, observer);
  FlopCounter* counter = rec.counter();
  ModelState state = init;
  state.surrogate_offset = 0.0f;
  if (!constraints.empty()) project_state(state, constraints, VariableSelector::Joint);
  const std::size_t m = geometry.probe_size();
  const std::size_t kk = geometry.count();
  const std::size_t n = geometry.object_size();
  UnitaryFft2d fft(geometry.probe_shape());
  // Curvature bound of the per-pixel data term in the far-field variable.
  const double lipschitz = kind == MetricKind::Gaussian ? 1.0 : 2.0;
  const float step = static_cast<float>(1.0 / (lipschitz + rho));
  const float inv_rho = static_cast<float>(1.0 / rho);
  const auto bg = data.background().values();

  auto lin = linearize(state, geometry, data, counter);
  double f = excess_of(*lin, data, kind, counter);
  rec.record(state, 0, f, f);

  ComplexStack psi = lin->far_field();
  ComplexStack multiplier(kk, geometry.probe_shape());
  ComplexStack target(kk, geometry.probe_shape());
  std::vector<cfloat> view(m), buf(m);
  for (std::size_t t = 1; t <= max_iters; ++t) {
    // Real-space targets F^H (psi_hat + Lambda / rho).
    for (std::size_t k = 0; k < kk; ++k) {
      auto out = target.slice(k);
      const auto pk = psi.slice(k);
      const auto lk = multiplier.slice(k);
      for (std::size_t i = 0; i < m; ++i) out[i] = pk[i] + inv_rho * lk[i];
      fft.inverse(out, out);
    }
    charge_fft(counter, m, kk);
    charge_cmul(counter, kk * m);
    charge_cadd(counter, kk * m);

    if (state.optimize_probe) {
      std::vector<cfloat> num(m);
      std::vector<double> den(m, 0.0);
      for (std::size_t k = 0; k < kk; ++k) {
        extract_view_into(state.object.values(), geometry, k, view);
        const auto tk = target.slice(k);
        for (std::size_t i = 0; i < m; ++i) {
          num[i] += std::conj(view[i]) * tk[i];
          den[i] += abs2(view[i]);
        }
      }
      ratio_update(state.probe, num, den);
      project_probe(state.probe, constraints);
      charge_cmul(counter, 2 * kk * m);
      charge_cadd(counter, 2 * kk * m);
    }
    if (state.optimize_object) {
      std::vector<cfloat> num(n);
      std::vector<double> den(n, 0.0);
      const RealGrid illum = illumination_map(state.probe, geometry);
      for (std::size_t i = 0; i < n; ++i) den[i] = illum[i];
      for (std::size_t k = 0; k < kk; ++k) {
        const auto tk = target.slice(k);
        for (std::size_t i = 0; i < m; ++i) buf[i] = std::conj(state.probe[i]) * tk[i];
        scatter_add(buf, geometry, k, num);
      }
      ratio_update(state.object, num, den);
      project_object(state.object, constraints);
      charge_cmul(counter, 2 * kk * m);
      charge_cadd(counter, 2 * kk * m);
    }
    require_finite(state.object.values(), "object");
    require_finite(state.probe.values(), "probe");

    lin = linearize(state, geometry, data, counter);
    const double before = f;
    f = excess_of(*lin, data, kind, counter);
    const ComplexStack& a = lin->far_field();

    // One gradient step on the far-field variable of the augmented Lagrangian.
    for (std::size_t k = 0; k < kk; ++k) {
      auto pk = psi.slice(k);
      const auto ak = a.slice(k);
      const auto lk = multiplier.slice(k);
      const auto y = data.patterns().slice(k);
      for (std::size_t i = 0; i < m; ++i) {
        const float zeta = std::sqrt(abs2(pk[i]) + bg[i]);
        const float c = pixel::grad_magnitude(zeta, y[i], kind) / zeta;
        const cfloat grad = c * pk[i] + lk[i] + static_cast<float>(rho) * (pk[i] - ak[i]);
        pk[i] -= step * grad;
      }
    }
    charge_cmul(counter, 3 * kk * m);
    charge_cadd(counter, 4 * kk * m);
    charge_real(counter, 6 * kk * m);
    admm_multiplier_update(multiplier, psi, a, rho);
    charge_cadd(counter, 2 * kk * m);
    charge_cmul(counter, kk * m);
    require_finite(psi.values(), "far-field iterate");

    if (diagnostics) {
      double r2 = 0.0;
      for (std::size_t i = 0; i < psi.size(); ++i) r2 += abs2(psi[i] - a[i]);
      diagnostics->primal_residual.push_back(std::sqrt(r2));
    }
    rec.record(state, t, f, before);
  }
  return rec.finish(std::move(state), StopReason::IterationLimit);
}

}  // namespace ptycho
