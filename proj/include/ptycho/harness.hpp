#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptycho/baselines.hpp"
#include "ptycho/core.hpp"
#include "ptycho/cost.hpp"
#include "ptycho/lm.hpp"
#include "ptycho/trace.hpp"

namespace ptycho {

// ---- synthesis -------------------------------------------------------------------------------------------------

/// Circular pupil of `pupil_radius` frequency pixels with a quadratic defocus phase reaching `defocus` radians
/// at its edge, propagated to real space, centered in the grid and scaled so that sum |P|^2 = total_photons.
ComplexGrid make_probe(Shape shape, double pupil_radius, double defocus, double total_photons);

/// Radius in pixels of the central Airy lobe produced by a pupil of the given radius.
double airy_lobe_radius(Shape shape, double pupil_radius);

/// Flat circular aperture of the given radius with sum |P|^2 = total_photons.
ComplexGrid aperture_probe(Shape shape, double radius, double total_photons);

/// Structured complex test object (magnitude in [0.2, 1], phase within (-pi, pi)) centered in a box of 1.0.
ComplexGrid make_object(Shape inner_shape, Shape box_shape, std::uint64_t seed = 0);

/// Independent entries uniform over the unit disk.
ComplexGrid random_object(Shape shape, std::uint64_t seed);

/// y_k ~ Poisson(|F(P S_k O)|^2 + b) with a seeded generator.
DiffractionStack simulate_dataset(const ComplexGrid& object, const ComplexGrid& probe, const ScanGeometry& geometry,
                                  const RealGrid& background, std::uint64_t seed);

ComplexGrid crop_center(const ComplexGrid& grid, Shape shape);

// ---- evaluation ------------------------------------------------------------------------------------------------

struct Registration {
  double row_shift = 0.0;
  double col_shift = 0.0;
  double error = 0.0;
};

/// Removes the subpixel translation (upsampled cross-correlation) and the global phase of `reconstructed`
/// relative to `truth`, then returns ||aligned - truth|| / ||truth||.
Registration register_images(const ComplexGrid& reconstructed, const ComplexGrid& truth, std::size_t upsample = 100);
double register_error(const ComplexGrid& reconstructed, const ComplexGrid& truth, std::size_t upsample = 100);

/// Sample standard deviation of every length-W window of `series` (window j covers j .. j+W-1).
std::vector<double> window_rmsd(std::span<const double> series, std::size_t window = 100);

/// First window j with RMSD <= eps_c whose mean is within `mean_tolerance` of the smallest window mean.
/// A zero tolerance is the strict global-minimum rule.
std::optional<std::size_t> converged_at(std::span<const double> series, std::size_t window, double eps_c,
                                        double mean_tolerance = 0.0);

enum class FlopEventKind { Fft, ComplexMultiply, ComplexAdd, RealOp };

struct FlopEvent {
  FlopEventKind kind;
  std::uint64_t count = 1;
  std::uint64_t fft_size = 0;  // samples per transform, for Fft events
};

std::uint64_t flop_cost(std::span<const FlopEvent> events, const CostModel& model = {});
/// Cumulative flops after each iteration's events.
std::vector<std::uint64_t> flop_report(const std::vector<std::vector<FlopEvent>>& iterations,
                                       const CostModel& model = {});
/// Per-iteration flops recovered from a trace's cumulative column.
std::vector<std::uint64_t> per_iteration_flops(const ConvergenceTrace& trace);

// ---- experiments -----------------------------------------------------------------------------------------------

struct ExperimentConfig {
  Shape box{224, 224};
  Shape inner{160, 160};
  Shape probe{64, 64};
  std::size_t step = 5;
  std::size_t per_axis = 32;
  double background = 1e-8;
  double photons = 1e6;
  double pupil_radius = 6.0;
  double defocus = 10.0;
  std::uint64_t object_seed = 0;
  std::uint64_t noise_seed = 1;
};

struct Dataset {
  ScanGeometry geometry;
  ComplexGrid object;
  ComplexGrid probe;
  DiffractionStack data;
};

Dataset make_dataset(const ExperimentConfig& config);

/// Mean accumulated dose (photons per pixel summed over all scan positions) over the inner object region.
double fluence_per_pixel(const ExperimentConfig& config);

enum class Algorithm { LM, PLM, LMA, PLMA, PLMJ, EPIE, NCG, PNCG, NAG, PHEBIE, ADMM };
enum class MetricChoice { Gaussian, Poisson, PoissonSurrogate };
enum class Problem { SPR, BPR };

std::optional<Algorithm> parse_algorithm(const std::string& name);
std::optional<MetricChoice> parse_metric(const std::string& name);
std::optional<Problem> parse_problem(const std::string& name);
std::string to_string(Algorithm a);
std::string to_string(MetricChoice m);
std::string to_string(Problem p);
MetricKind metric_kind(MetricChoice m);

struct RunSpec {
  Algorithm algorithm = Algorithm::PLM;
  MetricChoice metric = MetricChoice::Gaussian;
  Problem problem = Problem::SPR;
  std::size_t max_iters = 100;
  std::uint64_t seed = 0;           // object initialization (and ePIE ordering)
  CurvatureBasis basis = CurvatureBasis::Magnitude;
  double admm_rho = 1.0;
  std::optional<bool> preconditioned;  // overrides the algorithm's default
  std::optional<double> beta;          // overrides the CG forcing constant
  std::size_t surrogate_length = 100;
  std::size_t registration_upsample = 100;
  bool track_errors = true;
};

/// Throws ConfigError for unsupported algorithm / metric / problem combinations.
void validate_run(const RunSpec& spec);

/// Initial state per the experiment protocol (random object; true probe for SPR, aperture probe for BPR).
ModelState initial_state(const Dataset& dataset, const ExperimentConfig& config, const RunSpec& spec);

/// Runs one reconstruction, filling eps_object (inner region) and eps_probe (BPR) in every trace row.
/// `inspect`, when set, sees every iterate after the error columns are filled.
SolverResult run_reconstruction(const Dataset& dataset, const ExperimentConfig& config, const RunSpec& spec,
                                const Observer& inspect = {});

struct Aggregate {
  std::vector<double> mean_eps_object;
  std::vector<double> mean_eps_probe;  // empty for SPR
  std::vector<double> mean_flops;
  std::optional<std::size_t> converged;  // convergence window index
  double flops_to_convergence = 0.0;     // mean cumulative flops at the convergence index (NaN if none)
  std::vector<SolverResult> runs;
};

/// Pads early-stopped series with their last value to `length` iterations, averages them over the runs and
/// locates the convergence point.
Aggregate aggregate_runs(std::vector<SolverResult> runs, Problem problem, std::size_t length, std::size_t window,
                         double eps_c, double mean_tolerance);

/// Runs the spec for each seed, pads early-stopped series with their last value to `length` iterations,
/// averages them and locates the convergence point.
Aggregate run_seeds(const Dataset& dataset, const ExperimentConfig& config, RunSpec spec,
                    std::span<const std::uint64_t> seeds, std::size_t length, std::size_t window, double eps_c,
                    double mean_tolerance);

/// Iterations until the mean object error first drops to `threshold` (none if never).
std::optional<std::size_t> first_below(std::span<const double> series, double threshold);

}  // namespace ptycho
