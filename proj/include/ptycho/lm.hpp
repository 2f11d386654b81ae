#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "ptycho/core.hpp"
#include "ptycho/cost.hpp"
#include "ptycho/matfree.hpp"
#include "ptycho/metrics.hpp"
#include "ptycho/trace.hpp"

namespace ptycho {

enum class Scaling { Identity, GGNDiag };

struct SurrogateSchedule {
  std::size_t length = 100;
  double initial = 1.0;
  double floor = 1e-4;
};

struct LMConfig {
  double mu0 = 1e-5;
  double mu_min = 1e-8;
  double kappa = 4.0;
  double nu = 1.0;
  double rho_min = 1e-4;
  double beta = 0.1;
  double sigma = 1e-4;    // Armijo constant of the projected line search
  double gamma = 1e-6;    // direct acceptance of the projected step
  double tau_s = 1e-8;    // descent test on the projected direction
  double p_s = 2.1;
  Scaling scaling = Scaling::Identity;
  bool preconditioned = false;
  CurvatureBasis basis = CurvatureBasis::Magnitude;
  std::size_t max_outer = 100;
  std::size_t max_cg = 100;
  std::size_t max_retries = 20;
  std::size_t max_halvings = 30;
  /// Stop once the model predicts less than this fraction of the current excess objective.
  double reduction_tol = 1e-10;
  std::optional<SurrogateSchedule> surrogate;

  /// Defaults with beta chosen per metric (0.1 Gaussian, 0.9 Poisson).
  static LMConfig defaults(MetricKind kind);
  /// Diagonal scaling and Jacobi preconditioning switched on.
  static LMConfig preconditioned_defaults(MetricKind kind);
  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Per-variable magnitude bounds; an absent bound leaves that variable free.
struct ConstraintSet {
  std::optional<float> object_bound;
  std::optional<float> probe_bound;

  bool empty() const { return !object_bound && !probe_bound; }
  /// |O| <= 1 and |P| <= 1e8.
  static ConstraintSet standard();
};

ComplexGrid project_magnitude(const ComplexGrid& grid, float bound);
void project_in_place(ComplexGrid& grid, float bound);
/// Projects the variables selected by `sel` onto the constraint set.
void project_state(ModelState& state, const ConstraintSet& constraints, VariableSelector sel);
void project_object(ComplexGrid& object, const ConstraintSet& constraints);
void project_probe(ComplexGrid& probe, const ConstraintSet& constraints);
bool is_feasible(const ModelState& state, const ConstraintSet& constraints, double slack = 1e-6);

double lm_lambda(double mu, double data_grad_norm, double nu, Scaling scaling);

/// State carried between outer iterations.
struct LmProgress {
  double mu = 1e-5;
  std::size_t iteration = 0;
  RIVector warm_start;
  std::shared_ptr<Linearization> cache;

  explicit LmProgress(const LMConfig& config) : mu(config.mu0) {}
};

struct LmStep {
  bool accepted = false;
  bool converged = false;
  bool stagnated = false;
  double f_before = 0.0;  // excess objective, same surrogate offset
  double f_after = 0.0;
  double lambda = 0.0;
  double rho = 0.0;
  double grad_norm = 0.0;
  float surrogate = 0.0f;
  std::size_t cg_iters = 0;
  std::size_t lambda_updates = 0;
  std::size_t ls_iters = 0;
};

/// Objective evaluated at a packed point; used by the projection plug-in.
using PointObjective = std::function<double(const RIVector&)>;
using Projector = std::function<void(RIVector&)>;

struct ProjectedStepResult {
  RIVector point;
  double f = 0.0;
  std::size_t ls_iters = 0;
  bool failed = false;
  int branch = 0;  // 1 direct, 2 along the projected step, 3 projected gradient
};

/// Feasibility-preserving acceptance of an LM step. `trial_f` is f at Pi(z + step) when already known.
ProjectedStepResult projected_step(const RIVector& z, const RIVector& step, const RIVector& grad, double f0,
                                   const PointObjective& f, const Projector& project, const LMConfig& config,
                                   std::optional<double> trial_f = std::nullopt);

/// One outer iteration (with its retries) on `state`, which is updated in place when a step is accepted.
LmStep lm_iteration(ModelState& state, const ScanGeometry& geometry, const DiffractionStack& data,
                    const LMConfig& config, const ConstraintSet& constraints, VariableSelector sel, MetricKind kind,
                    LmProgress& progress, FlopCounter* counter = nullptr);

struct SolverResult {
  ModelState state;
  ConvergenceTrace trace;
  StopReason stop = StopReason::IterationLimit;
};

/// Object-only reconstruction with a known probe, unconstrained.
SolverResult lm_run_spr(const ComplexGrid& init_object, const ComplexGrid& probe, const ScanGeometry& geometry,
                        const DiffractionStack& data, const LMConfig& config, MetricKind kind,
                        const Observer& observer = {});

/// Alternating object/probe LM steps.
SolverResult lm_run_bpr_alternating(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                                    const LMConfig& config, const ConstraintSet& constraints, MetricKind kind,
                                    const Observer& observer = {});

/// Joint object/probe LM; requires preconditioning with GGN-diagonal scaling.
SolverResult lm_run_bpr_joint(const ModelState& init, const ScanGeometry& geometry, const DiffractionStack& data,
                              const LMConfig& config, const ConstraintSet& constraints, MetricKind kind,
                              const Observer& observer = {});

}  // namespace ptycho
