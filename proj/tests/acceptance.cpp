// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion numbers to select a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ptycho/harness.hpp"
#include "ptycho/matfree.hpp"
#include "ptycho/precond.hpp"
#include "support/oracle.hpp"

using namespace ptycho;

namespace {

// ---- pinned tolerances -----------------------------------------------------------------------------------------

namespace tol {
constexpr double kOracleRelative = 1e-3;
constexpr double kAdjoint = 1e-5;
constexpr double kSymmetry = 1e-5;
constexpr double kDiagonal = 5e-3;
constexpr double kOracleSeconds = 10.0;

constexpr double kEpsC = 1e-3;
constexpr std::size_t kWindow = 100;
constexpr double kMeanTolerance = kEpsC;

constexpr std::size_t kPlmMaxConverged = 40;
constexpr double kPlmFinalObject = 0.05;

constexpr double kBasisTarget = 0.1;
constexpr double kNcgAgreement = 0.2;

constexpr double kSurrogateRatio = 0.6;

constexpr double kJointFinalProbe = 0.1;

constexpr double kMonotoneSlack = 1e-6;
constexpr double kFeasibleSlack = 1e-6;

constexpr std::uint64_t kFft64 = 245760;
}  // namespace tol

constexpr std::size_t kSeeds = 5;

// ---- reporting -------------------------------------------------------------------------------------------------

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string index_text(const std::optional<std::size_t>& i) { return i ? std::to_string(*i) : "none"; }

// ---- shared experiment state -----------------------------------------------------------------------------------

struct Lab {
  std::map<double, Dataset> datasets;
  std::vector<ConvergenceTrace> lm_traces;  // every LM-family run, for the monotonicity audit
  std::size_t lm_runs_audited = 0;

  ExperimentConfig config(double photons) const {
    ExperimentConfig c;
    c.photons = photons;
    return c;
  }

  const Dataset& dataset(double photons) {
    auto it = datasets.find(photons);
    if (it == datasets.end()) it = datasets.emplace(photons, make_dataset(config(photons))).first;
    return it->second;
  }

  std::vector<SolverResult> runs(double photons, RunSpec spec, std::size_t length, std::size_t seeds = kSeeds,
                                 const Observer& inspect = {}) {
    spec.max_iters = length;
    std::vector<SolverResult> out;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      spec.seed = s;
      out.push_back(run_reconstruction(dataset(photons), config(photons), spec, inspect));
      if (is_lm(spec.algorithm)) lm_traces.push_back(out.back().trace);
    }
    return out;
  }

  Aggregate aggregate(double photons, const RunSpec& spec, std::size_t length, std::size_t seeds = kSeeds) {
    return aggregate_runs(runs(photons, spec, length, seeds), spec.problem, length, tol::kWindow, tol::kEpsC,
                          tol::kMeanTolerance);
  }

  static bool is_lm(Algorithm a) {
    return a == Algorithm::LM || a == Algorithm::PLM || a == Algorithm::LMA || a == Algorithm::PLMA ||
           a == Algorithm::PLMJ;
  }
};

RunSpec spec_for(Algorithm a, MetricChoice m = MetricChoice::Gaussian, Problem p = Problem::SPR) {
  RunSpec s;
  s.algorithm = a;
  s.metric = m;
  s.problem = p;
  return s;
}

// Every window at or before `index` must be flat for a convergence point there; the flatness of a window depends
// only on its own samples, so a baseline with no flat window up to `index` provably converges later, whatever
// happens after the series ends.
std::optional<std::size_t> first_flat_window(std::span<const double> series) {
  const auto r = window_rmsd(series, tol::kWindow);
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (r[j] <= tol::kEpsC) return j;
  }
  return std::nullopt;
}

// Baseline convergence strictly later than `reference`, established from j + W iterations when possible and from
// a longer run otherwise.
struct LaterVerdict {
  bool later = false;
  std::string detail;
};

LaterVerdict converges_later(Lab& lab, double photons, const RunSpec& spec, std::size_t reference,
                             std::size_t fallback_length, std::size_t seeds = kSeeds) {
  const std::size_t short_length = reference + tol::kWindow;
  Aggregate a = aggregate_runs(lab.runs(photons, spec, short_length, seeds), spec.problem, short_length, tol::kWindow,
                               tol::kEpsC, tol::kMeanTolerance);
  const auto flat = first_flat_window(std::span(a.mean_eps_object).first(reference + tol::kWindow));
  if (!flat) {
    return {true, to_string(spec.algorithm) + " has no flat window up to " + std::to_string(reference) +
                      " (final <eps_O>=" + fmt(a.mean_eps_object.back()) + ")"};
  }
  Aggregate b = lab.aggregate(photons, spec, fallback_length, seeds);
  const bool later = !b.converged || *b.converged > reference;
  return {later, to_string(spec.algorithm) + " converged at " + index_text(b.converged) + " of " +
                     std::to_string(fallback_length) + " (final <eps_O>=" + fmt(b.mean_eps_object.back()) + ")"};
}

// ---- 1: oracle equivalence -------------------------------------------------------------------------------------

Eigen::VectorXd gaussian_vector(Eigen::Index n, std::mt19937& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return oracle::to_eigen(oracle::to_rivector(v));  // rounded to the float grid the kernels see
}

void criterion_oracles(Outcome& out, Lab&) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(11);
  double jac = 0.0, grad = 0.0, ggn = 0.0, adjoint = 0.0, symmetry = 0.0, psd = 0.0;
  const std::vector<std::vector<Offset>> scans = {
      {{0, 0}, {2, 2}}, {{0, 0}, {1, 2}, {2, 1}}, {{0, 0}, {0, 2}, {1, 1}, {2, 2}}};
  const VariableSelector sels[] = {VariableSelector::ObjectOnly, VariableSelector::ProbeOnly, VariableSelector::Joint};
  std::uint64_t seed = 100;
  for (const auto& scan : scans) {
    for (double surrogate : {0.0, 0.3}) {
      const oracle::Problem p = oracle::random_problem(seed++, {4, 4}, {2, 2}, scan, surrogate);
      const ScanGeometry g = oracle::geometry(p);
      const ModelState s = oracle::state(p);
      const DiffractionStack d = oracle::data(p);
      Linearization lin(s, g, d.background());
      lin.set_surrogate(static_cast<float>(surrogate));
      for (VariableSelector sel : sels) {
        for (bool intensity : {false, true}) {
          const CurvatureBasis basis = intensity ? CurvatureBasis::Intensity : CurvatureBasis::Magnitude;
          const Eigen::MatrixXd dense_j = oracle::jacobian(p, sel, intensity);
          const Eigen::VectorXd v = gaussian_vector(dense_j.cols(), rng);
          const Eigen::VectorXd w = gaussian_vector(dense_j.rows(), rng);
          const Eigen::VectorXd jv = oracle::to_eigen(lin.jvp(oracle::to_rivector(v), sel, basis));
          const Eigen::VectorXd jtw =
              oracle::to_eigen(lin.jtvp(oracle::to_stack(w, p.k(), p.probe_shape), sel, basis));
          jac = std::max({jac, oracle::rel_error(jv, dense_j * v), oracle::rel_error(jtw, dense_j.transpose() * w)});
          adjoint = std::max(adjoint, std::abs(jv.dot(w) - v.dot(jtw)) / (jv.norm() * w.norm() + v.norm() * jtw.norm()));
        }
        for (MetricKind kind : {MetricKind::Gaussian, MetricKind::Poisson}) {
          const Eigen::VectorXd fd = oracle::gradient(p, sel, kind);
          for (CurvatureBasis basis : {CurvatureBasis::Magnitude, CurvatureBasis::Intensity}) {
            const RIVector gr = gradient(s, g, d, static_cast<float>(surrogate), kind, sel, basis);
            grad = std::max(grad, oracle::rel_error(oracle::to_eigen(gr), fd));
            const bool intensity = basis == CurvatureBasis::Intensity;
            const Eigen::MatrixXd dense = oracle::ggn(p, sel, kind, intensity);
            const RealStack h = lin.data_curvature(d.patterns(), kind, basis);
            const auto product = [&](const Eigen::VectorXd& x) {
              return oracle::to_eigen(lin.ggn_vec(oracle::to_rivector(x), h, sel, basis));
            };
            const Eigen::VectorXd u = gaussian_vector(dense.cols(), rng);
            const Eigen::VectorXd v = gaussian_vector(dense.cols(), rng);
            const Eigen::VectorXd gu = product(u), gv = product(v);
            ggn = std::max({ggn, oracle::rel_error(gu, dense * u), oracle::rel_error(gv, dense * v)});
            const double scale = dense.norm();
            symmetry = std::max(symmetry, std::abs(u.dot(gv) - v.dot(gu)) / (u.norm() * v.norm() * scale));
            for (int trial = 0; trial < 20; ++trial) {
              const Eigen::VectorXd x = gaussian_vector(dense.cols(), rng);
              psd = std::max(psd, -x.dot(product(x)) / (x.squaredNorm() * scale));
            }
          }
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  out.detail << "max rel err jvp/jtvp " << fmt(jac) << ", gradient " << fmt(grad) << ", ggn_vec " << fmt(ggn)
             << "; adjoint " << fmt(adjoint) << ", asymmetry " << fmt(symmetry) << ", negativity " << fmt(psd)
             << "; " << fmt(elapsed, 2) << " s";
  out.require(jac <= tol::kOracleRelative, "Jacobian products");
  out.require(grad <= tol::kOracleRelative, "gradient");
  out.require(ggn <= tol::kOracleRelative, "GGN products");
  out.require(adjoint <= tol::kAdjoint, "adjoint identity");
  out.require(symmetry <= tol::kSymmetry, "GGN symmetry");
  out.require(psd <= tol::kSymmetry, "GGN positive semidefinite");
  out.require(elapsed < tol::kOracleSeconds, "runtime");
}

// ---- 2: preconditioner diagonals -------------------------------------------------------------------------------

void criterion_diagonals(Outcome& out, Lab&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  std::uint64_t seed = 200;
  for (const auto& scan : std::vector<std::vector<Offset>>{{{0, 0}, {0, 1}, {1, 1}, {2, 2}}, {{0, 0}, {2, 1}}}) {
    const oracle::Problem p = oracle::random_problem(seed++, {4, 4}, {2, 2}, scan);
    const ModelState s = oracle::state(p);
    const ScanGeometry g = oracle::geometry(p);
    const DiffractionStack d = oracle::data(p);
    for (MetricKind kind : {MetricKind::Gaussian, MetricKind::Poisson}) {
      for (VariableSelector sel : {VariableSelector::ObjectOnly, VariableSelector::ProbeOnly, VariableSelector::Joint}) {
        const Eigen::MatrixXd dense = oracle::ggn(p, sel, kind);
        Eigen::VectorXd ours;
        if (sel == VariableSelector::ObjectOnly) {
          ours = oracle::to_eigen(to_real_basis(object_ggn_diag(s, g, d, 0.0f, kind), {}, sel));
        } else if (sel == VariableSelector::ProbeOnly) {
          ours = oracle::to_eigen(to_real_basis({}, probe_ggn_diag(s, g, d, 0.0f, kind), sel));
        } else {
          ours = oracle::to_eigen(joint_ggn_diag(s, g, d, 0.0f, kind));
        }
        // The real and imaginary entries of one pixel share a diagonal value: the mean of the two dense entries.
        const Eigen::Index half = dense.rows() / 2;
        const double peak = dense.diagonal().maxCoeff();
        for (Eigen::Index i = 0; i < half; ++i) {
          const double expect = 0.5 * (dense(i, i) + dense(half + i, half + i));
          if (expect <= 1e-6 * peak) continue;  // unilluminated
          for (Eigen::Index at : {i, half + i}) worst = std::max(worst, std::abs(ours[at] - expect) / expect);
          ++checked;
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  out.detail << checked << " illuminated pixels, max rel err " << fmt(worst) << "; " << fmt(elapsed, 2) << " s";
  out.require(checked > 0, "nothing checked");
  out.require(worst <= tol::kDiagonal, "diagonal mismatch");
  out.require(elapsed < tol::kOracleSeconds, "runtime");
}

// ---- 3: Gaussian SPR -------------------------------------------------------------------------------------------

void criterion_gaussian_spr(Outcome& out, Lab& lab) {
  constexpr double kPhotons = 1e6;
  constexpr std::size_t kLength = tol::kPlmMaxConverged + tol::kWindow + 20;
  const Aggregate plm = lab.aggregate(kPhotons, spec_for(Algorithm::PLM), kLength);
  const double final_object = plm.mean_eps_object.back();
  out.detail << "PLM converged at " << index_text(plm.converged) << " (<= " << tol::kPlmMaxConverged
             << "), final <eps_O>=" << fmt(final_object);
  out.require(plm.converged && *plm.converged <= tol::kPlmMaxConverged, "PLM convergence point");
  out.require(final_object <= tol::kPlmFinalObject, "PLM final error");
  if (!plm.converged) return;
  for (Algorithm a : {Algorithm::NAG, Algorithm::PNCG}) {
    const LaterVerdict v = converges_later(lab, kPhotons, spec_for(a), *plm.converged, 600);
    out.detail << "; " << v.detail;
    out.require(v.later, to_string(a) + " not slower");
  }
}

// ---- 4: magnitude versus intensity curvature -------------------------------------------------------------------

void criterion_basis(Outcome& out, Lab& lab) {
  constexpr double kPhotons = 1e6;
  constexpr std::size_t kLmCap = 60;
  constexpr std::size_t kNcgCap = 250;
  RunSpec magnitude = spec_for(Algorithm::LM);
  RunSpec intensity = magnitude;
  intensity.basis = CurvatureBasis::Intensity;

  const Aggregate lm_mag = lab.aggregate(kPhotons, magnitude, kLmCap);
  const auto hit_mag = first_below(lm_mag.mean_eps_object, tol::kBasisTarget);
  out.detail << "LM magnitude reaches " << tol::kBasisTarget << " at " << index_text(hit_mag);
  out.require(hit_mag.has_value(), "magnitude LM never reached the target");
  if (hit_mag) {
    // Intensity LM only needs to be followed as far as the magnitude count to decide the comparison.
    const Aggregate lm_int = lab.aggregate(kPhotons, intensity, *hit_mag);
    const auto hit_int = first_below(lm_int.mean_eps_object, tol::kBasisTarget);
    out.detail << ", intensity " << (hit_int ? "at " + std::to_string(*hit_int) : "not within " + std::to_string(*hit_mag))
               << " (<eps_O>=" << fmt(lm_int.mean_eps_object.back()) << ")";
    out.require(!hit_int || *hit_int > *hit_mag, "intensity LM not slower");
  }

  RunSpec ncg_mag = spec_for(Algorithm::NCG);
  RunSpec ncg_int = ncg_mag;
  ncg_int.basis = CurvatureBasis::Intensity;
  const auto a = first_below(lab.aggregate(kPhotons, ncg_mag, kNcgCap).mean_eps_object, tol::kBasisTarget);
  const auto b = first_below(lab.aggregate(kPhotons, ncg_int, kNcgCap).mean_eps_object, tol::kBasisTarget);
  out.detail << "; NCG magnitude " << index_text(a) << ", intensity " << index_text(b);
  out.require(a && b, "NCG did not reach the target");
  if (a && b) {
    const double gap = std::abs(static_cast<double>(*a) - static_cast<double>(*b)) / static_cast<double>(*a);
    out.require(gap <= tol::kNcgAgreement, "NCG counts differ");
  }
}

// ---- 5: surrogate Poisson metric -------------------------------------------------------------------------------

void criterion_surrogate(Outcome& out, Lab& lab) {
  constexpr std::size_t kLength = 300;
  constexpr std::size_t kSurrogateSeeds = 3;
  for (double photons : {1e4, 1e6}) {
    const Aggregate plain =
        lab.aggregate(photons, spec_for(Algorithm::PLM, MetricChoice::Poisson), kLength, kSurrogateSeeds);
    const Aggregate sur =
        lab.aggregate(photons, spec_for(Algorithm::PLM, MetricChoice::PoissonSurrogate), kLength, kSurrogateSeeds);
    const double ratio = sur.flops_to_convergence / plain.flops_to_convergence;
    out.detail << (photons == 1e4 ? "" : "; ") << fmt(photons, 1) << " photons: PLM converged at "
               << index_text(plain.converged) << " (" << fmt(plain.flops_to_convergence) << " flops), PLM-S at "
               << index_text(sur.converged) << " (" << fmt(sur.flops_to_convergence) << " flops), ratio "
               << fmt(ratio);
    out.require(plain.converged && sur.converged, "no convergence point at " + fmt(photons, 1));
    out.require(ratio <= tol::kSurrogateRatio, "ratio at " + fmt(photons, 1));
  }
}

// ---- 6: blind joint scheme -------------------------------------------------------------------------------------

void criterion_joint(Outcome& out, Lab& lab) {
  constexpr double kPhotons = 1e4;
  constexpr std::size_t kLength = 200;
  const RunSpec joint = spec_for(Algorithm::PLMJ, MetricChoice::Gaussian, Problem::BPR);
  const Aggregate plmj = lab.aggregate(kPhotons, joint, kLength);
  const double final_probe = plmj.mean_eps_probe.back();
  out.detail << "PLM-J converged at " << index_text(plmj.converged) << ", final <eps_P>=" << fmt(final_probe)
             << " <eps_O>=" << fmt(plmj.mean_eps_object.back());
  out.require(plmj.converged.has_value(), "PLM-J convergence point");
  out.require(final_probe <= tol::kJointFinalProbe, "PLM-J probe error");
  if (plmj.converged) {
    for (Algorithm a : {Algorithm::PHEBIE, Algorithm::EPIE}) {
      const LaterVerdict v =
          converges_later(lab, kPhotons, spec_for(a, MetricChoice::Gaussian, Problem::BPR), *plmj.converged, 600);
      out.detail << "; " << v.detail;
      out.require(v.later, to_string(a) + " not slower");
    }
  }

  RunSpec bare = joint;
  bare.preconditioned = false;
  bool spec_rejected = false, solver_rejected = false;
  try {
    validate_run(bare);
  } catch (const ConfigError&) {
    spec_rejected = true;
  }
  try {
    const Dataset& d = lab.dataset(kPhotons);
    LMConfig c = LMConfig::defaults(MetricKind::Gaussian);
    c.preconditioned = false;
    c.scaling = Scaling::Identity;
    c.max_outer = 1;
    lm_run_bpr_joint(initial_state(d, lab.config(kPhotons), joint), d.geometry, d.data, c, ConstraintSet::standard(),
                     MetricKind::Gaussian);
  } catch (const std::invalid_argument&) {
    solver_rejected = true;
  }
  out.detail << "; unpreconditioned joint rejected by run validation " << (spec_rejected ? "yes" : "no")
             << ", by the solver " << (solver_rejected ? "yes" : "no");
  out.require(spec_rejected && solver_rejected, "unpreconditioned joint accepted");
}

// ---- 7: monotonicity and feasibility ---------------------------------------------------------------------------

struct Audit {
  double worst_increase = 0.0;  // relative to |f_before|
  double worst_violation = 0.0;
  std::size_t steps = 0;
  std::size_t iterates = 0;

  void trace(const ConvergenceTrace& t) {
    for (const TraceRow& r : t.rows) {
      if (r.iteration == 0) continue;
      worst_increase = std::max(worst_increase, (r.f - r.f_before) / std::max(1.0, std::abs(r.f_before)));
      ++steps;
    }
  }

  Observer bounds(const ConstraintSet& c) {
    return [this, c](const ModelState& s, TraceRow&) {
      const auto excess = [](const ComplexGrid& g, float bound) {
        double worst = 0.0;
        for (const cfloat& z : g.values()) worst = std::max(worst, std::abs(std::complex<double>(z)) / bound - 1.0);
        return worst;
      };
      if (c.object_bound) worst_violation = std::max(worst_violation, excess(s.object, *c.object_bound));
      if (c.probe_bound) worst_violation = std::max(worst_violation, excess(s.probe, *c.probe_bound));
      ++iterates;
    };
  }
};

void criterion_monotone(Outcome& out, Lab& lab) {
  constexpr std::size_t kIters = 6;
  constexpr std::size_t kAuditSeeds = 1;
  Audit audit;
  const ConstraintSet bounds = ConstraintSet::standard();
  std::size_t runs = 0;
  for (double photons : {1e3, 1e4, 1e6}) {
    for (Algorithm a : {Algorithm::LM, Algorithm::PLM, Algorithm::LMA, Algorithm::PLMA, Algorithm::PLMJ,
                        Algorithm::EPIE, Algorithm::NCG, Algorithm::PNCG, Algorithm::NAG, Algorithm::PHEBIE,
                        Algorithm::ADMM}) {
      for (MetricChoice m : {MetricChoice::Gaussian, MetricChoice::Poisson, MetricChoice::PoissonSurrogate}) {
        for (Problem p : {Problem::SPR, Problem::BPR}) {
          RunSpec spec = spec_for(a, m, p);
          spec.track_errors = false;
          try {
            validate_run(spec);
          } catch (const ConfigError&) {
            continue;
          }
          const Observer inspect = p == Problem::BPR ? audit.bounds(bounds) : Observer{};
          lab.runs(photons, spec, kIters, kAuditSeeds, inspect);
          ++runs;
        }
      }
    }
  }
  // The short runs above plus every LM run made by the other criteria.
  for (std::size_t i = lab.lm_runs_audited; i < lab.lm_traces.size(); ++i) audit.trace(lab.lm_traces[i]);
  lab.lm_runs_audited = lab.lm_traces.size();
  out.detail << runs << " short runs over 3 fluences plus earlier LM runs; " << audit.steps
             << " LM steps, worst relative increase " << fmt(audit.worst_increase) << "; " << audit.iterates
             << " constrained iterates, worst bound excess " << fmt(audit.worst_violation);
  out.require(audit.worst_increase <= tol::kMonotoneSlack, "objective increased");
  out.require(audit.worst_violation <= tol::kFeasibleSlack, "bounds violated");
}

// ---- 8: bookkeeping --------------------------------------------------------------------------------------------

double direct_rmsd(const std::vector<double>& s, std::size_t j, std::size_t w) {
  double mean = 0.0;
  for (std::size_t i = j; i < j + w; ++i) mean += s[i];
  mean /= static_cast<double>(w);
  double ss = 0.0;
  for (std::size_t i = j; i < j + w; ++i) ss += (s[i] - mean) * (s[i] - mean);
  return std::sqrt(ss / static_cast<double>(w - 1));
}

std::optional<std::size_t> direct_converged(const std::vector<double>& s, std::size_t w, double eps_c) {
  if (s.size() < w) return std::nullopt;
  std::vector<double> means;
  for (std::size_t j = 0; j + w <= s.size(); ++j) {
    double m = 0.0;
    for (std::size_t i = j; i < j + w; ++i) m += s[i];
    means.push_back(m / static_cast<double>(w));
  }
  const double lowest = *std::min_element(means.begin(), means.end());
  for (std::size_t j = 0; j < means.size(); ++j) {
    if (direct_rmsd(s, j, w) <= eps_c && means[j] <= lowest) return j;
  }
  return std::nullopt;
}

void criterion_bookkeeping(Outcome& out, Lab&) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise;
  std::vector<std::vector<double>> series;
  for (double amp : {0.0, 1e-4, 1e-2}) {
    std::vector<double> s(320);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = 0.03 + 0.8 * std::exp(-0.05 * static_cast<double>(i)) + amp * noise(rng);
    }
    series.push_back(s);
  }
  std::vector<double> dip(260, 0.1);
  for (std::size_t i = 150; i < dip.size(); ++i) dip[i] = 0.05;
  series.push_back(dip);
  series.push_back(std::vector<double>(80, 0.0));

  std::size_t windows = 0, mismatches = 0, points = 0, point_mismatches = 0;
  for (const auto& s : series) {
    for (std::size_t w : {10u, 100u}) {
      if (s.size() >= w) {
        const auto r = window_rmsd(s, w);
        for (std::size_t j = 0; j < r.size(); ++j, ++windows) mismatches += r[j] != direct_rmsd(s, j, w);
      }
      for (double eps : {1e-3, 1e-2}) {
        ++points;
        point_mismatches += converged_at(s, w, eps) != direct_converged(s, w, eps);
      }
    }
  }

  const std::vector<FlopEvent> fft{{FlopEventKind::Fft, 1, 64 * 64}};
  const std::uint64_t fft_cost = flop_cost(fft);
  std::vector<std::vector<FlopEvent>> iterations;
  std::uniform_int_distribution<int> kind(0, 3), count(1, 50);
  for (int it = 0; it < 20; ++it) {
    std::vector<FlopEvent> events;
    for (int e = 0; e < 8; ++e) {
      const auto k = static_cast<FlopEventKind>(kind(rng));
      events.push_back({k, static_cast<std::uint64_t>(count(rng)), k == FlopEventKind::Fft ? 4096u : 0u});
    }
    iterations.push_back(events);
  }
  const auto report = flop_report(iterations);
  bool additive = report.size() == iterations.size();
  std::uint64_t running = 0;
  std::vector<FlopEvent> all;
  for (std::size_t i = 0; additive && i < iterations.size(); ++i) {
    running += flop_cost(iterations[i]);
    all.insert(all.end(), iterations[i].begin(), iterations[i].end());
    additive = report[i] == running;
  }
  additive = additive && flop_cost(all) == running;

  out.detail << windows << " windows with " << mismatches << " mismatches, " << points << " convergence points with "
             << point_mismatches << " mismatches; flop_report additive " << (additive ? "yes" : "no")
             << "; 64x64 FFT = " << fft_cost;
  out.require(mismatches == 0, "window RMSD");
  out.require(point_mismatches == 0, "convergence point");
  out.require(additive, "flop additivity");
  out.require(fft_cost == tol::kFft64, "FFT cost");
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&, Lab&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "oracle equivalence", criterion_oracles},
      {2, "preconditioner diagonals", criterion_diagonals},
      {3, "Gaussian SPR at 1e6 photons", criterion_gaussian_spr},
      {4, "magnitude vs intensity curvature", criterion_basis},
      {5, "Poisson surrogate cost", criterion_surrogate},
      {6, "blind joint scheme at 1e4 photons", criterion_joint},
      {7, "monotonicity and feasibility", criterion_monotone},
      {8, "convergence bookkeeping", criterion_bookkeeping},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  Lab lab;
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(out, lab);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << " [exception: " << e.what() << "]";
    }
    failures += !out.pass;
    std::printf("%s %d %s: %s (%.0f s)\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.str().c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
