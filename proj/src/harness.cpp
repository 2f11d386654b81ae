#include "ptycho/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ptycho/fft.hpp"
#include "ptycho/forward.hpp"

namespace ptycho {
namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

std::vector<cd> to_double(const ComplexGrid& g) {
  std::vector<cd> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = cd(g[i].real(), g[i].imag());
  return out;
}

// Signed DFT frequency of index k on an n-point grid.
double signed_frequency(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

void normalize_photons(ComplexGrid& probe, double total_photons) {
  double power = 0.0;
  for (const cfloat& z : probe.values()) power += abs2(cd(z));
  if (!(power > 0.0)) throw std::invalid_argument("probe has no power to normalize");
  const float s = static_cast<float>(std::sqrt(total_photons / power));
  for (cfloat& z : probe.values()) z *= s;
}

void rescale(std::vector<double>& v, double lo, double hi) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double a = *mn, b = *mx;
  for (double& x : v) x = b > a ? lo + (hi - lo) * (x - a) / (b - a) : hi;
}

}  // namespace

// ---- synthesis -------------------------------------------------------------------------------------------------

double airy_lobe_radius(Shape shape, double pupil_radius) {
  if (!(pupil_radius > 0.0)) throw std::invalid_argument("pupil radius must be positive");
  // First zero of J1 is at 3.8317; a pupil of radius R frequency samples on an n-point grid maps it to
  // 3.8317 n / (2 pi R) pixels.
  const double n = static_cast<double>(std::min(shape.rows, shape.cols));
  return 3.8317059702 * n / (2.0 * kPi * pupil_radius);
}

ComplexGrid make_probe(Shape shape, double pupil_radius, double defocus, double total_photons) {
  if (shape.size() == 0) throw std::invalid_argument("probe shape must be nonempty");
  if (!(pupil_radius > 0.0) || pupil_radius > 0.5 * static_cast<double>(std::min(shape.rows, shape.cols))) {
    throw std::invalid_argument("pupil radius must be positive and fit inside the grid");
  }
  if (!(total_photons > 0.0)) throw std::invalid_argument("total photons must be positive");
  std::vector<cd> field(shape.size());
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t c = 0; c < shape.cols; ++c) {
      const double fr = signed_frequency(r, shape.rows);
      const double fc = signed_frequency(c, shape.cols);
      const double q2 = (fr * fr + fc * fc) / (pupil_radius * pupil_radius);
      if (q2 <= 1.0) field[r * shape.cols + c] = std::polar(1.0, defocus * q2);
    }
  }
  unitary_fft2d(field, shape, true);
  // Move the beam from the corner to the grid center.
  ComplexGrid probe(shape);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t c = 0; c < shape.cols; ++c) {
      const cd z = field[r * shape.cols + c];
      probe((r + shape.rows / 2) % shape.rows, (c + shape.cols / 2) % shape.cols) =
          cfloat(static_cast<float>(z.real()), static_cast<float>(z.imag()));
    }
  }
  normalize_photons(probe, total_photons);
  return probe;
}

ComplexGrid aperture_probe(Shape shape, double radius, double total_photons) {
  if (!(radius > 0.0)) throw std::invalid_argument("aperture radius must be positive");
  if (!(total_photons > 0.0)) throw std::invalid_argument("total photons must be positive");
  ComplexGrid probe(shape);
  const double cr = static_cast<double>(shape.rows / 2);
  const double cc = static_cast<double>(shape.cols / 2);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t c = 0; c < shape.cols; ++c) {
      const double d = std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc);
      if (d <= radius) probe(r, c) = 1.0f;
    }
  }
  normalize_photons(probe, total_photons);
  return probe;
}

ComplexGrid make_object(Shape inner_shape, Shape box_shape, std::uint64_t seed) {
  if (inner_shape.rows > box_shape.rows || inner_shape.cols > box_shape.cols) {
    throw std::invalid_argument("inner object does not fit in the box");
  }
  std::mt19937_64 rng(seed ^ 0x5DEECE66Dull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double rows = static_cast<double>(inner_shape.rows);
  const double cols = static_cast<double>(inner_shape.cols);
  const double scale = std::min(rows, cols) / 160.0;
  std::vector<double> mag(inner_shape.size(), 0.0);
  std::vector<double> phase(inner_shape.size(), 0.0);

  // Soft-edged disks of mixed size and contrast for the magnitude.
  for (int d = 0; d < 60; ++d) {
    const double r0 = unit(rng) * rows, c0 = unit(rng) * cols;
    const double radius = (3.0 + 17.0 * unit(rng)) * scale;
    const double amp = 2.0 * unit(rng) - 1.0;
    for (std::size_t r = 0; r < inner_shape.rows; ++r) {
      for (std::size_t c = 0; c < inner_shape.cols; ++c) {
        const double dist = std::hypot(static_cast<double>(r) - r0, static_cast<double>(c) - c0);
        const double edge = std::clamp((radius - dist) / 1.5 + 0.5, 0.0, 1.0);
        mag[r * inner_shape.cols + c] += amp * edge;
      }
    }
  }
  // Smooth Gaussian bumps for the phase.
  for (int b = 0; b < 25; ++b) {
    const double r0 = unit(rng) * rows, c0 = unit(rng) * cols;
    const double sigma = (5.0 + 20.0 * unit(rng)) * scale;
    const double amp = 2.0 * unit(rng) - 1.0;
    for (std::size_t r = 0; r < inner_shape.rows; ++r) {
      for (std::size_t c = 0; c < inner_shape.cols; ++c) {
        const double dr = static_cast<double>(r) - r0, dc = static_cast<double>(c) - c0;
        phase[r * inner_shape.cols + c] += amp * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      }
    }
  }
  rescale(mag, 0.2, 1.0);
  rescale(phase, -0.75 * kPi, 0.75 * kPi);

  ComplexGrid object(box_shape, cfloat(1.0f, 0.0f));
  const std::size_t r_off = (box_shape.rows - inner_shape.rows) / 2;
  const std::size_t c_off = (box_shape.cols - inner_shape.cols) / 2;
  for (std::size_t r = 0; r < inner_shape.rows; ++r) {
    for (std::size_t c = 0; c < inner_shape.cols; ++c) {
      const std::size_t i = r * inner_shape.cols + c;
      const cd z = std::polar(mag[i], phase[i]);
      object(r + r_off, c + c_off) = cfloat(static_cast<float>(z.real()), static_cast<float>(z.imag()));
    }
  }
  // Float rounding of polar() can exceed the unit bound by an ulp.
  project_in_place(object, 1.0f);
  return object;
}

ComplexGrid random_object(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ComplexGrid out(shape);
  for (cfloat& z : out.values()) {
    const double r = std::sqrt(unit(rng));
    const double t = (2.0 * unit(rng) - 1.0) * kPi;
    z = cfloat(static_cast<float>(r * std::cos(t)), static_cast<float>(r * std::sin(t)));
  }
  project_in_place(out, 1.0f);
  return out;
}

DiffractionStack simulate_dataset(const ComplexGrid& object, const ComplexGrid& probe, const ScanGeometry& geometry,
                                  const RealGrid& background, std::uint64_t seed) {
  if (background.shape() != geometry.probe_shape()) throw std::invalid_argument("background shape mismatch");
  for (float b : background.values()) {
    if (!(b > 0.0f)) throw std::invalid_argument("background must be strictly positive");
  }
  ModelState state{object, probe};
  state.validate(geometry);
  const ComplexStack far = far_field_stack(state, geometry);
  RealStack y(geometry.count(), geometry.probe_shape());
  std::mt19937_64 rng(seed);
  const std::size_t m = geometry.probe_size();
  for (std::size_t i = 0; i < far.size(); ++i) {
    const double mean = abs2(cd(far[i])) + background[i % m];
    std::poisson_distribution<std::int64_t> draw(mean);
    y[i] = static_cast<float>(draw(rng));
  }
  return DiffractionStack(std::move(y), background);
}

ComplexGrid crop_center(const ComplexGrid& grid, Shape shape) {
  if (shape.rows > grid.rows() || shape.cols > grid.cols()) throw std::invalid_argument("crop larger than grid");
  const std::size_t r0 = (grid.rows() - shape.rows) / 2;
  const std::size_t c0 = (grid.cols() - shape.cols) / 2;
  ComplexGrid out(shape);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    for (std::size_t c = 0; c < shape.cols; ++c) out(r, c) = grid(r + r0, c + c0);
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------------------------------------------

Registration register_images(const ComplexGrid& reconstructed, const ComplexGrid& truth, std::size_t upsample) {
  if (reconstructed.shape() != truth.shape()) throw std::invalid_argument("registration: shapes differ");
  const Shape shape = truth.shape();
  const std::size_t n = shape.rows, m = shape.cols;
  std::vector<cd> ref = to_double(truth);
  double truth_norm2 = 0.0;
  for (const cd& z : ref) truth_norm2 += abs2(z);
  if (!(truth_norm2 > 0.0)) throw std::invalid_argument("registration: truth is zero");

  std::vector<cd> ft_ref = ref;
  std::vector<cd> ft_rec = to_double(reconstructed);
  unitary_fft2d(ft_ref, shape, false);
  unitary_fft2d(ft_rec, shape, false);
  std::vector<cd> prod(n * m);
  for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = ft_ref[i] * std::conj(ft_rec[i]);

  std::vector<cd> cc = prod;
  unitary_fft2d(cc, shape, true);
  std::size_t peak = 0;
  for (std::size_t i = 1; i < cc.size(); ++i) {
    if (std::abs(cc[i]) > std::abs(cc[peak])) peak = i;
  }
  double row = signed_frequency(peak / m, n);
  double col = signed_frequency(peak % m, m);

  if (upsample > 1) {
    // Matrix-multiply DFT of the cross-power spectrum on a 1.5-pixel neighbourhood at 1/upsample spacing.
    const double us = static_cast<double>(upsample);
    const std::size_t region = static_cast<std::size_t>(std::ceil(1.5 * us));
    const double center = std::floor(static_cast<double>(region) / 2.0);
    std::vector<double> rows_at(region), cols_at(region);
    for (std::size_t u = 0; u < region; ++u) {
      rows_at[u] = row + (static_cast<double>(u) - center) / us;
      cols_at[u] = col + (static_cast<double>(u) - center) / us;
    }
    std::vector<cd> tmp(region * m, cd{});
    for (std::size_t u = 0; u < region; ++u) {
      for (std::size_t kr = 0; kr < n; ++kr) {
        const cd w = std::polar(1.0, 2.0 * kPi * signed_frequency(kr, n) * rows_at[u] / static_cast<double>(n));
        const cd* src = &prod[kr * m];
        cd* dst = &tmp[u * m];
        for (std::size_t kc = 0; kc < m; ++kc) dst[kc] += w * src[kc];
      }
    }
    std::vector<cd> col_kernel(m * region);
    for (std::size_t kc = 0; kc < m; ++kc) {
      for (std::size_t v = 0; v < region; ++v) {
        col_kernel[kc * region + v] =
            std::polar(1.0, 2.0 * kPi * signed_frequency(kc, m) * cols_at[v] / static_cast<double>(m));
      }
    }
    double best = -1.0;
    std::size_t bu = 0, bv = 0;
    for (std::size_t u = 0; u < region; ++u) {
      for (std::size_t v = 0; v < region; ++v) {
        cd s{};
        for (std::size_t kc = 0; kc < m; ++kc) s += tmp[u * m + kc] * col_kernel[kc * region + v];
        if (std::abs(s) > best) {
          best = std::abs(s);
          bu = u;
          bv = v;
        }
      }
    }
    row = rows_at[bu];
    col = cols_at[bv];
  }

  for (std::size_t kr = 0; kr < n; ++kr) {
    for (std::size_t kc = 0; kc < m; ++kc) {
      const double arg = -2.0 * kPi *
                         (signed_frequency(kr, n) * row / static_cast<double>(n) +
                          signed_frequency(kc, m) * col / static_cast<double>(m));
      ft_rec[kr * m + kc] *= std::polar(1.0, arg);
    }
  }
  unitary_fft2d(ft_rec, shape, true);
  cd overlap{};
  for (std::size_t i = 0; i < ref.size(); ++i) overlap += std::conj(ft_rec[i]) * ref[i];
  const cd phase = std::abs(overlap) > 0.0 ? overlap / std::abs(overlap) : cd(1.0);
  double err2 = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) err2 += abs2(ft_rec[i] * phase - ref[i]);
  return {row, col, std::sqrt(err2 / truth_norm2)};
}

double register_error(const ComplexGrid& reconstructed, const ComplexGrid& truth, std::size_t upsample) {
  return register_images(reconstructed, truth, upsample).error;
}

std::vector<double> window_rmsd(std::span<const double> series, std::size_t window) {
  if (window < 2) throw std::invalid_argument("window must hold at least two samples");
  if (series.size() < window) throw std::invalid_argument("series is shorter than the window");
  std::vector<double> out(series.size() - window + 1);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const auto w = series.subspan(j, window);
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(window);
    double ss = 0.0;
    for (double v : w) ss += (v - mean) * (v - mean);
    out[j] = std::sqrt(ss / static_cast<double>(window - 1));
  }
  return out;
}

std::optional<std::size_t> converged_at(std::span<const double> series, std::size_t window, double eps_c,
                                        double mean_tolerance) {
  if (series.size() < window) return std::nullopt;
  const std::vector<double> rmsd = window_rmsd(series, window);
  std::vector<double> means(rmsd.size());
  for (std::size_t j = 0; j < means.size(); ++j) {
    double s = 0.0;
    for (double v : series.subspan(j, window)) s += v;
    means[j] = s / static_cast<double>(window);
  }
  const double lowest = *std::min_element(means.begin(), means.end());
  for (std::size_t j = 0; j < rmsd.size(); ++j) {
    if (rmsd[j] <= eps_c && means[j] <= lowest + mean_tolerance) return j;
  }
  return std::nullopt;
}

std::uint64_t flop_cost(std::span<const FlopEvent> events, const CostModel& model) {
  std::uint64_t total = 0;
  for (const FlopEvent& e : events) {
    switch (e.kind) {
      case FlopEventKind::Fft: total += e.count * model.fft(e.fft_size); break;
      case FlopEventKind::ComplexMultiply: total += e.count * model.complex_multiply; break;
      case FlopEventKind::ComplexAdd: total += e.count * model.complex_add; break;
      case FlopEventKind::RealOp: total += e.count * model.real_op; break;
    }
  }
  return total;
}

std::vector<std::uint64_t> flop_report(const std::vector<std::vector<FlopEvent>>& iterations, const CostModel& model) {
  std::vector<std::uint64_t> out;
  std::uint64_t total = 0;
  for (const auto& events : iterations) {
    total += flop_cost(events, model);
    out.push_back(total);
  }
  return out;
}

std::vector<std::uint64_t> per_iteration_flops(const ConvergenceTrace& trace) {
  std::vector<std::uint64_t> out;
  std::uint64_t prev = 0;
  for (const TraceRow& row : trace.rows) {
    out.push_back(row.cumulative_flops - prev);
    prev = row.cumulative_flops;
  }
  return out;
}

// ---- experiments -----------------------------------------------------------------------------------------------

Dataset make_dataset(const ExperimentConfig& config) {
  ScanGeometry geometry = ScanGeometry::raster(config.box, config.probe, config.step, config.per_axis);
  ComplexGrid probe = make_probe(config.probe, config.pupil_radius, config.defocus, config.photons);
  ComplexGrid object = make_object(config.inner, config.box, config.object_seed);
  RealGrid background(config.probe, static_cast<float>(config.background));
  DiffractionStack data = simulate_dataset(object, probe, geometry, background, config.noise_seed);
  return {std::move(geometry), std::move(object), std::move(probe), std::move(data)};
}

double fluence_per_pixel(const ExperimentConfig& config) {
  const ScanGeometry geometry = ScanGeometry::raster(config.box, config.probe, config.step, config.per_axis);
  const ComplexGrid probe = make_probe(config.probe, config.pupil_radius, config.defocus, config.photons);
  const RealGrid dose = illumination_map(probe, geometry);
  const std::size_t r0 = (config.box.rows - config.inner.rows) / 2;
  const std::size_t c0 = (config.box.cols - config.inner.cols) / 2;
  double total = 0.0;
  for (std::size_t r = 0; r < config.inner.rows; ++r) {
    for (std::size_t c = 0; c < config.inner.cols; ++c) total += dose(r + r0, c + c0);
  }
  return total / static_cast<double>(config.inner.size());
}

namespace {

struct NamedAlgorithm {
  Algorithm value;
  const char* name;
};
constexpr NamedAlgorithm kAlgorithms[] = {
    {Algorithm::LM, "lm"},     {Algorithm::PLM, "plm"},   {Algorithm::LMA, "lm-a"},     {Algorithm::PLMA, "plm-a"},
    {Algorithm::PLMJ, "plm-j"}, {Algorithm::EPIE, "epie"}, {Algorithm::NCG, "ncg"},      {Algorithm::PNCG, "pncg"},
    {Algorithm::NAG, "nag"},   {Algorithm::PHEBIE, "phebie"}, {Algorithm::ADMM, "admm"},
};

bool is_lm(Algorithm a) {
  return a == Algorithm::LM || a == Algorithm::PLM || a == Algorithm::LMA || a == Algorithm::PLMA ||
         a == Algorithm::PLMJ;
}

}  // namespace

std::optional<Algorithm> parse_algorithm(const std::string& name) {
  for (const auto& a : kAlgorithms) {
    if (name == a.name) return a.value;
  }
  return std::nullopt;
}

std::string to_string(Algorithm a) {
  for (const auto& n : kAlgorithms) {
    if (n.value == a) return n.name;
  }
  return "unknown";
}

std::optional<MetricChoice> parse_metric(const std::string& name) {
  if (name == "gaussian") return MetricChoice::Gaussian;
  if (name == "poisson") return MetricChoice::Poisson;
  if (name == "poisson-surrogate") return MetricChoice::PoissonSurrogate;
  return std::nullopt;
}

std::string to_string(MetricChoice m) {
  switch (m) {
    case MetricChoice::Gaussian: return "gaussian";
    case MetricChoice::Poisson: return "poisson";
    case MetricChoice::PoissonSurrogate: return "poisson-surrogate";
  }
  return "unknown";
}

std::optional<Problem> parse_problem(const std::string& name) {
  if (name == "spr") return Problem::SPR;
  if (name == "bpr") return Problem::BPR;
  return std::nullopt;
}

std::string to_string(Problem p) { return p == Problem::SPR ? "spr" : "bpr"; }

MetricKind metric_kind(MetricChoice m) { return m == MetricChoice::Gaussian ? MetricKind::Gaussian : MetricKind::Poisson; }

void validate_run(const RunSpec& spec) {
  const Algorithm a = spec.algorithm;
  const std::string name = to_string(a);
  if ((a == Algorithm::EPIE || a == Algorithm::NAG || a == Algorithm::PHEBIE) && spec.metric != MetricChoice::Gaussian) {
    throw ConfigError(name + " is defined for the Gaussian metric only");
  }
  if (spec.metric == MetricChoice::PoissonSurrogate && !is_lm(a)) {
    throw ConfigError("the surrogate Poisson metric is only used by the LM solvers");
  }
  const bool spr_only = a == Algorithm::LM || a == Algorithm::PLM || a == Algorithm::NCG || a == Algorithm::PNCG ||
                        a == Algorithm::NAG;
  const bool bpr_only = a == Algorithm::LMA || a == Algorithm::PLMA || a == Algorithm::PLMJ;
  if (spr_only && spec.problem == Problem::BPR) {
    throw ConfigError(name + " solves the known-probe problem only (use lm-a, plm-a or plm-j for blind runs)");
  }
  if (bpr_only && spec.problem == Problem::SPR) throw ConfigError(name + " is a blind (object and probe) solver");
  if (spec.basis == CurvatureBasis::Intensity && !(is_lm(a) || a == Algorithm::NCG || a == Algorithm::PNCG)) {
    throw ConfigError("the intensity formulation is available for LM and NCG only");
  }
  if (a == Algorithm::PLMJ && spec.preconditioned == false) {
    throw ConfigError("the joint object/probe solve needs GGN-diagonal scaling and preconditioning");
  }
  if (a == Algorithm::ADMM && !(spec.admm_rho > 0.0)) throw ConfigError("ADMM penalty must be positive");
  if (spec.beta && !(*spec.beta > 0.0 && *spec.beta < 1.0)) throw ConfigError("beta must lie in (0, 1)");
}

ModelState initial_state(const Dataset& dataset, const ExperimentConfig& config, const RunSpec& spec) {
  ModelState s;
  s.object = random_object(dataset.geometry.object_shape(), spec.seed);
  if (spec.problem == Problem::SPR) {
    s.probe = dataset.probe;
    s.optimize_probe = false;
  } else {
    double power = 0.0;
    for (const cfloat& z : dataset.probe.values()) power += abs2(cd(z));
    s.probe = aperture_probe(config.probe, airy_lobe_radius(config.probe, config.pupil_radius), power);
    s.optimize_probe = true;
  }
  s.optimize_object = true;
  return s;
}

SolverResult run_reconstruction(const Dataset& dataset, const ExperimentConfig& config, const RunSpec& spec,
                                const Observer& inspect) {
  validate_run(spec);
  const ModelState init = initial_state(dataset, config, spec);
  const ComplexGrid truth_inner = crop_center(dataset.object, config.inner);
  const bool blind = spec.problem == Problem::BPR;
  Observer observer;
  if (spec.track_errors || inspect) {
    observer = [&](const ModelState& s, TraceRow& row) {
      if (spec.track_errors) {
        row.eps_object = register_error(crop_center(s.object, config.inner), truth_inner, spec.registration_upsample);
        if (blind) row.eps_probe = register_error(s.probe, dataset.probe, spec.registration_upsample);
      }
      if (inspect) inspect(s, row);
    };
  }
  const MetricKind kind = metric_kind(spec.metric);
  const ConstraintSet bounds = blind ? ConstraintSet::standard() : ConstraintSet{};
  const auto& geom = dataset.geometry;
  const auto& data = dataset.data;

  switch (spec.algorithm) {
    case Algorithm::LM:
    case Algorithm::PLM:
    case Algorithm::LMA:
    case Algorithm::PLMA:
    case Algorithm::PLMJ: {
      const bool pre = spec.algorithm == Algorithm::PLM || spec.algorithm == Algorithm::PLMA ||
                       spec.algorithm == Algorithm::PLMJ;
      LMConfig c = LMConfig::defaults(kind);
      const bool use_pre = spec.preconditioned.value_or(pre);
      c.preconditioned = use_pre;
      c.scaling = use_pre ? Scaling::GGNDiag : Scaling::Identity;
      c.basis = spec.basis;
      c.max_outer = spec.max_iters;
      if (spec.beta) c.beta = *spec.beta;
      if (spec.metric == MetricChoice::PoissonSurrogate) c.surrogate = SurrogateSchedule{spec.surrogate_length, 1.0, 1e-4};
      if (spec.algorithm == Algorithm::LM || spec.algorithm == Algorithm::PLM) {
        return lm_run_spr(init.object, init.probe, geom, data, c, kind, observer);
      }
      if (spec.algorithm == Algorithm::PLMJ) return lm_run_bpr_joint(init, geom, data, c, bounds, kind, observer);
      return lm_run_bpr_alternating(init, geom, data, c, bounds, kind, observer);
    }
    case Algorithm::NCG:
    case Algorithm::PNCG: {
      NcgOptions o;
      o.preconditioned = spec.preconditioned.value_or(spec.algorithm == Algorithm::PNCG);
      o.basis = spec.basis;
      o.max_iters = spec.max_iters;
      return ncg_run(init.object, init.probe, geom, data, kind, o, observer);
    }
    case Algorithm::NAG: return nag_run(init.object, init.probe, geom, data, spec.max_iters, observer);
    case Algorithm::EPIE: return epie_run(init, geom, data, bounds, spec.max_iters, spec.seed, observer);
    case Algorithm::PHEBIE: return phebie_run(init, geom, data, bounds, spec.max_iters, observer);
    case Algorithm::ADMM: return admm_run(init, geom, data, bounds, spec.admm_rho, kind, spec.max_iters, observer);
  }
  throw ConfigError("unknown algorithm");
}

namespace {

std::vector<double> padded(const std::vector<double>& v, std::size_t length) {
  std::vector<double> out(length, v.empty() ? kNotRecorded : v.back());
  std::copy_n(v.begin(), std::min(v.size(), length), out.begin());
  return out;
}

}  // namespace

Aggregate aggregate_runs(std::vector<SolverResult> runs, Problem problem, std::size_t length, std::size_t window,
                         double eps_c, double mean_tolerance) {
  if (runs.empty()) throw ConfigError("at least one run is required");
  Aggregate agg;
  const std::size_t rows = length + 1;
  const bool blind = problem == Problem::BPR;
  agg.mean_eps_object.assign(rows, 0.0);
  agg.mean_flops.assign(rows, 0.0);
  if (blind) agg.mean_eps_probe.assign(rows, 0.0);
  const double inv = 1.0 / static_cast<double>(runs.size());
  for (const SolverResult& r : runs) {
    std::vector<double> eo, ep, fl;
    for (const TraceRow& row : r.trace.rows) {
      eo.push_back(row.eps_object);
      ep.push_back(row.eps_probe);
      fl.push_back(static_cast<double>(row.cumulative_flops));
    }
    eo = padded(eo, rows);
    fl = padded(fl, rows);
    for (std::size_t t = 0; t < rows; ++t) {
      agg.mean_eps_object[t] += inv * eo[t];
      agg.mean_flops[t] += inv * fl[t];
    }
    if (blind) {
      ep = padded(ep, rows);
      for (std::size_t t = 0; t < rows; ++t) agg.mean_eps_probe[t] += inv * ep[t];
    }
  }
  agg.runs = std::move(runs);
  agg.converged = converged_at(agg.mean_eps_object, window, eps_c, mean_tolerance);
  agg.flops_to_convergence = agg.converged ? agg.mean_flops[*agg.converged] : kNotRecorded;
  return agg;
}

Aggregate run_seeds(const Dataset& dataset, const ExperimentConfig& config, RunSpec spec,
                    std::span<const std::uint64_t> seeds, std::size_t length, std::size_t window, double eps_c,
                    double mean_tolerance) {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  spec.max_iters = length;
  std::vector<SolverResult> runs;
  for (std::uint64_t seed : seeds) {
    spec.seed = seed;
    runs.push_back(run_reconstruction(dataset, config, spec));
  }
  return aggregate_runs(std::move(runs), spec.problem, length, window, eps_c, mean_tolerance);
}

std::optional<std::size_t> first_below(std::span<const double> series, double threshold) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i] <= threshold) return i;
  }
  return std::nullopt;
}

}  // namespace ptycho
