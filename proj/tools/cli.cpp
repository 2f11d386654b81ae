#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ptycho/fft.hpp"

namespace ptycho::cli {
namespace {

constexpr double kPi = std::numbers::pi;

// ---- raw payloads --------------------------------------------------------------------------------------------

template <typename Word>
Word to_little(Word w) {
  if constexpr (std::endian::native == std::endian::big) {
    Word out = 0;
    for (std::size_t i = 0; i < sizeof(Word); ++i) out = (out << 8) | ((w >> (8 * i)) & 0xFF);
    return out;
  }
  return w;
}

void write_floats(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint32_t> words(count);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(count * 4));
  if (in.gcount() != static_cast<std::streamsize>(count * 4)) throw IoError(path.string() + " is truncated");
  if (in.peek() != std::ifstream::traits_type::eof()) throw IoError(path.string() + " is longer than its sidecar says");
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<float>(to_little(words[i]));
  return values;
}

fs::path with_suffix(const fs::path& base, const char* suffix) { return fs::path(base.string() + suffix); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_sidecar(const fs::path& base, const std::vector<std::size_t>& shape, const char* dtype) {
  const json side = {{"shape", shape}, {"dtype", dtype}, {"order", "row-major"}, {"version", kFormatVersion}};
  write_text(with_suffix(base, ".json"), side.dump(2) + "\n");
}

std::vector<std::size_t> read_sidecar(const fs::path& base, const char* dtype) {
  const json side = read_json(with_suffix(base, ".json"));
  try {
    if (side.at("dtype").get<std::string>() != dtype) {
      throw IoError(base.string() + ": expected dtype " + dtype + ", found " + side.at("dtype").get<std::string>());
    }
    if (side.at("order").get<std::string>() != "row-major") throw IoError(base.string() + ": unsupported order");
    if (side.at("version").get<int>() != kFormatVersion) throw IoError(base.string() + ": unsupported version");
    return side.at("shape").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw IoError(base.string() + ": malformed sidecar (" + e.what() + ")");
  }
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---- CSV -------------------------------------------------------------------------------------------------------

std::string cell(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

bool is_lm(Algorithm a) {
  return a == Algorithm::LM || a == Algorithm::PLM || a == Algorithm::LMA || a == Algorithm::PLMA ||
         a == Algorithm::PLMJ;
}

// ---- configuration ---------------------------------------------------------------------------------------------

Shape shape_from(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return {v.get<std::size_t>(), v.get<std::size_t>()};
  if (v.is_array() && v.size() == 2 && v[0].is_number_unsigned() && v[1].is_number_unsigned()) {
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  }
  throw ConfigError("'" + key + "' must be a positive integer or a [rows, cols] pair");
}

template <typename T>
T number(const json& v, const std::string& key) {
  if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
  } else {
    if (!v.is_number_unsigned()) throw ConfigError("'" + key + "' must be a nonnegative integer");
  }
  return v.get<T>();
}

std::string text(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("'" + key + "' must be a string");
  return v.get<std::string>();
}

Algorithm algorithm_named(const std::string& name) {
  const auto a = parse_algorithm(name);
  if (!a) {
    throw ConfigError("unknown algorithm '" + name + "' (lm, plm, lm-a, plm-a, plm-j, epie, ncg, pncg, nag, phebie, admm)");
  }
  return *a;
}

MetricChoice metric_named(const std::string& name) {
  const auto m = parse_metric(name);
  if (!m) throw ConfigError("unknown metric '" + name + "' (gaussian, poisson, poisson-surrogate)");
  return *m;
}

Problem problem_named(const std::string& name) {
  const auto p = parse_problem(name);
  if (!p) throw ConfigError("unknown problem '" + name + "' (spr, bpr)");
  return *p;
}

void apply_overrides(Config& c, const Options& o) {
  if (o.algorithm) {
    c.run.algorithm = algorithm_named(*o.algorithm);
    c.algorithms = {c.run.algorithm};
  }
  if (o.metric) c.run.metric = metric_named(*o.metric);
  if (o.problem) c.run.problem = problem_named(*o.problem);
  if (o.max_iters) c.run.max_iters = *o.max_iters;
}

Config resolve_config(const Options& o) {
  Config c = o.config_path ? load_config(*o.config_path) : Config{};
  apply_overrides(c, o);
  return c;
}

json versions() {
  return {{"ptycho", kToolVersion},
          {"format", kFormatVersion},
          {"fftw", fft_backend_version()},
          {"compiler", __VERSION__},
          {"cxx_standard", __cplusplus}};
}

void write_manifest(const fs::path& dir, const std::string& command, const Config& config, json extra) {
  const json resolved = to_json(config);
  json m = {{"command", command},
            {"config", resolved},
            {"config_hash", config_hash(resolved)},
            {"seeds",
             {{"object", config.experiment.object_seed},
              {"noise", config.experiment.noise_seed},
              {"init", config.run.seed}}},
            {"versions", versions()}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

Dataset dataset_for(const Config& c) {
  if (c.dataset) return load_dataset(*c.dataset);
  return make_dataset(c.experiment);
}

// The loaded dataset defines the geometry; the experiment block must agree with it for error tracking.
void check_consistent(const Dataset& d, const ExperimentConfig& e) {
  if (d.geometry.object_shape() != e.box || d.geometry.probe_shape() != e.probe) {
    throw ConfigError("dataset shapes do not match the configured box/probe sizes");
  }
  if (e.inner.rows > e.box.rows || e.inner.cols > e.box.cols) throw ConfigError("inner region larger than the box");
}

std::string stop_name(StopReason r) {
  switch (r) {
    case StopReason::IterationLimit: return "iteration-limit";
    case StopReason::Converged: return "converged";
    case StopReason::Stagnated: return "stagnated";
  }
  return "unknown";
}

std::string rho_label(double rho) {
  std::ostringstream s;
  s << "admm-rho=" << std::setprecision(4) << rho;
  return s.str();
}

}  // namespace

// ---- arrays --------------------------------------------------------------------------------------------------------

void write_real(const fs::path& base, std::span<const float> values, const std::vector<std::size_t>& shape) {
  if (element_count(shape) != values.size()) throw std::invalid_argument("array shape does not match its data");
  write_floats(with_suffix(base, ".bin"), values);
  write_sidecar(base, shape, "f32");
}

void write_complex(const fs::path& base, std::span<const cfloat> values, const std::vector<std::size_t>& shape) {
  if (element_count(shape) != values.size()) throw std::invalid_argument("array shape does not match its data");
  std::vector<float> flat(2 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    flat[2 * i] = values[i].real();
    flat[2 * i + 1] = values[i].imag();
  }
  write_floats(with_suffix(base, ".bin"), flat);
  write_sidecar(base, shape, "c64");
}

Array<float> read_real(const fs::path& base) {
  Array<float> a;
  a.shape = read_sidecar(base, "f32");
  a.values = read_floats(with_suffix(base, ".bin"), element_count(a.shape));
  return a;
}

Array<cfloat> read_complex(const fs::path& base) {
  Array<cfloat> a;
  a.shape = read_sidecar(base, "c64");
  const std::vector<float> flat = read_floats(with_suffix(base, ".bin"), 2 * element_count(a.shape));
  a.values.resize(flat.size() / 2);
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = {flat[2 * i], flat[2 * i + 1]};
  return a;
}

void write_grid(const fs::path& base, const ComplexGrid& grid) {
  write_complex(base, grid.values(), {grid.rows(), grid.cols()});
}

ComplexGrid read_grid(const fs::path& base) {
  Array<cfloat> a = read_complex(base);
  if (a.shape.size() != 2) throw IoError(base.string() + ": expected a 2D array");
  return ComplexGrid(a.shape[0], a.shape[1], std::move(a.values));
}

// ---- datasets ------------------------------------------------------------------------------------------------------

void save_dataset(const fs::path& dir, const Dataset& d) {
  ensure_dir(dir);
  write_grid(dir / "object", d.object);
  write_grid(dir / "probe", d.probe);
  const RealStack& y = d.data.patterns();
  write_real(dir / "patterns", y.values(), {y.count(), y.slice_shape().rows, y.slice_shape().cols});
  const RealGrid& b = d.data.background();
  write_real(dir / "background", b.values(), {b.rows(), b.cols()});
  json offsets = json::array();
  for (const Offset& o : d.geometry.offsets()) offsets.push_back({o.row, o.col});
  const json geom = {{"object_shape", {d.geometry.object_shape().rows, d.geometry.object_shape().cols}},
                     {"probe_shape", {d.geometry.probe_shape().rows, d.geometry.probe_shape().cols}},
                     {"offsets", offsets},
                     {"version", kFormatVersion}};
  write_text(dir / "geometry.json", geom.dump() + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  const json geom = read_json(dir / "geometry.json");
  std::vector<Offset> offsets;
  Shape object_shape, probe_shape;
  try {
    const auto os = geom.at("object_shape").get<std::vector<std::size_t>>();
    const auto ps = geom.at("probe_shape").get<std::vector<std::size_t>>();
    if (os.size() != 2 || ps.size() != 2) throw IoError("geometry.json: shapes must be 2D");
    object_shape = {os[0], os[1]};
    probe_shape = {ps[0], ps[1]};
    for (const auto& o : geom.at("offsets")) offsets.push_back({o.at(0).get<std::size_t>(), o.at(1).get<std::size_t>()});
  } catch (const json::exception& e) {
    throw IoError("geometry.json: " + std::string(e.what()));
  }
  ScanGeometry geometry(object_shape, probe_shape, std::move(offsets));
  Array<float> y = read_real(dir / "patterns");
  if (y.shape != std::vector<std::size_t>{geometry.count(), probe_shape.rows, probe_shape.cols}) {
    throw IoError("patterns do not match the geometry");
  }
  Array<float> b = read_real(dir / "background");
  if (b.shape != std::vector<std::size_t>{probe_shape.rows, probe_shape.cols}) {
    throw IoError("background does not match the probe shape");
  }
  RealStack patterns(geometry.count(), probe_shape);
  std::copy(y.values.begin(), y.values.end(), patterns.values().begin());
  RealGrid background(probe_shape.rows, probe_shape.cols, std::move(b.values));
  ComplexGrid object = read_grid(dir / "object");
  ComplexGrid probe = read_grid(dir / "probe");
  if (object.shape() != object_shape || probe.shape() != probe_shape) throw IoError("truth arrays do not match the geometry");
  return {std::move(geometry), std::move(object), std::move(probe), DiffractionStack(std::move(patterns), std::move(background))};
}

// ---- traces and previews -----------------------------------------------------------------------------------------

std::string trace_csv(const ConvergenceTrace& trace, Algorithm algorithm, Problem problem) {
  const bool lm = is_lm(algorithm);
  const bool line_search = lm || algorithm == Algorithm::NCG || algorithm == Algorithm::PNCG;
  std::ostringstream out;
  out << "iter,f,eps_O,eps_P,lambda,cg_iters,ls_iters,flops\n";
  for (const TraceRow& r : trace.rows) {
    const bool step = r.iteration > 0;
    out << r.iteration << ',' << cell(r.f) << ',' << cell(r.eps_object) << ','
        << (problem == Problem::BPR ? cell(r.eps_probe) : "") << ',' << (lm ? cell(r.lambda) : "") << ','
        << (lm && step ? std::to_string(r.cg_iters) : "") << ','
        << (line_search && step ? std::to_string(r.ls_iters) : "") << ',' << r.cumulative_flops << '\n';
  }
  return out.str();
}

void write_pgm16(const fs::path& path, const RealGrid& image, double lo, double hi) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n65535\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<unsigned char> bytes(2 * image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double t = std::clamp((static_cast<double>(image[i]) - lo) / span, 0.0, 1.0);
    const auto v = static_cast<std::uint16_t>(std::min(65535.0, std::floor(t * 65536.0)));
    bytes[2 * i] = static_cast<unsigned char>(v >> 8);
    bytes[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_previews(const fs::path& dir, const std::string& prefix, const ComplexGrid& object) {
  RealGrid mag(object.shape()), phase(object.shape());
  float peak = 0.0f;
  for (std::size_t i = 0; i < object.size(); ++i) {
    mag[i] = std::abs(object[i]);
    peak = std::max(peak, mag[i]);
    float a = std::arg(object[i]);
    if (a >= static_cast<float>(kPi)) a = -static_cast<float>(kPi);
    phase[i] = a;
  }
  write_pgm16(dir / (prefix + "_abs.pgm"), mag, 0.0, peak);
  write_pgm16(dir / (prefix + "_phase.pgm"), phase, -kPi, kPi);
}

// ---- configuration -------------------------------------------------------------------------------------------------

Config parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object of key/value pairs");
  Config c;
  ExperimentConfig& e = c.experiment;
  RunSpec& r = c.run;
  for (const auto& [key, v] : j.items()) {
    if (v.is_object()) throw ConfigError("'" + key + "': nested objects are not allowed");
    if (key == "box") e.box = shape_from(v, key);
    else if (key == "inner") e.inner = shape_from(v, key);
    else if (key == "probe") e.probe = shape_from(v, key);
    else if (key == "step") e.step = number<std::size_t>(v, key);
    else if (key == "per_axis") e.per_axis = number<std::size_t>(v, key);
    else if (key == "background") e.background = number<double>(v, key);
    else if (key == "photons") e.photons = number<double>(v, key);
    else if (key == "pupil_radius") e.pupil_radius = number<double>(v, key);
    else if (key == "defocus") e.defocus = number<double>(v, key);
    else if (key == "object_seed") e.object_seed = number<std::uint64_t>(v, key);
    else if (key == "noise_seed") e.noise_seed = number<std::uint64_t>(v, key);
    else if (key == "algorithm") r.algorithm = algorithm_named(text(v, key));
    else if (key == "metric") r.metric = metric_named(text(v, key));
    else if (key == "problem") r.problem = problem_named(text(v, key));
    else if (key == "max_iters") r.max_iters = number<std::size_t>(v, key);
    else if (key == "seed") r.seed = number<std::uint64_t>(v, key);
    else if (key == "basis") {
      const std::string b = text(v, key);
      if (b == "magnitude") r.basis = CurvatureBasis::Magnitude;
      else if (b == "intensity") r.basis = CurvatureBasis::Intensity;
      else throw ConfigError("'basis' must be 'magnitude' or 'intensity'");
    } else if (key == "admm_rho") r.admm_rho = number<double>(v, key);
    else if (key == "preconditioned") {
      if (!v.is_boolean()) throw ConfigError("'preconditioned' must be true or false");
      r.preconditioned = v.get<bool>();
    } else if (key == "beta") r.beta = number<double>(v, key);
    else if (key == "surrogate_length") r.surrogate_length = number<std::size_t>(v, key);
    else if (key == "registration_upsample") r.registration_upsample = number<std::size_t>(v, key);
    else if (key == "dataset") c.dataset = fs::path(text(v, key));
    else if (key == "algorithms") {
      if (!v.is_array()) throw ConfigError("'algorithms' must be a list of names");
      for (const auto& a : v) c.algorithms.push_back(algorithm_named(text(a, key)));
    } else if (key == "seeds") c.seed_count = number<std::size_t>(v, key);
    else if (key == "window") c.window = number<std::size_t>(v, key);
    else if (key == "eps_c") c.eps_c = number<double>(v, key);
    else if (key == "mean_tolerance") c.mean_tolerance = number<double>(v, key);
    else if (key == "admm_rhos") {
      if (!v.is_array() || v.empty()) throw ConfigError("'admm_rhos' must be a nonempty list of numbers");
      c.admm_rhos.clear();
      for (const auto& x : v) c.admm_rhos.push_back(number<double>(x, key));
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }
  if (c.seed_count == 0) throw ConfigError("'seeds' must be at least 1");
  if (c.window < 2) throw ConfigError("'window' must be at least 2");
  if (!(c.eps_c > 0.0)) throw ConfigError("'eps_c' must be positive");
  return c;
}

Config load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read configuration file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const Config& c) {
  const ExperimentConfig& e = c.experiment;
  const RunSpec& r = c.run;
  json j = {{"box", {e.box.rows, e.box.cols}},
            {"inner", {e.inner.rows, e.inner.cols}},
            {"probe", {e.probe.rows, e.probe.cols}},
            {"step", e.step},
            {"per_axis", e.per_axis},
            {"background", e.background},
            {"photons", e.photons},
            {"pupil_radius", e.pupil_radius},
            {"defocus", e.defocus},
            {"object_seed", e.object_seed},
            {"noise_seed", e.noise_seed},
            {"algorithm", to_string(r.algorithm)},
            {"metric", to_string(r.metric)},
            {"problem", to_string(r.problem)},
            {"max_iters", r.max_iters},
            {"seed", r.seed},
            {"basis", r.basis == CurvatureBasis::Magnitude ? "magnitude" : "intensity"},
            {"admm_rho", r.admm_rho},
            {"surrogate_length", r.surrogate_length},
            {"registration_upsample", r.registration_upsample},
            {"seeds", c.seed_count},
            {"window", c.window},
            {"eps_c", c.eps_c},
            {"mean_tolerance", c.mean_tolerance.value_or(c.eps_c)},
            {"admm_rhos", c.admm_rhos}};
  if (r.preconditioned) j["preconditioned"] = *r.preconditioned;
  if (r.beta) j["beta"] = *r.beta;
  if (c.dataset) j["dataset"] = c.dataset->string();
  json algs = json::array();
  for (Algorithm a : c.algorithms) algs.push_back(to_string(a));
  j["algorithms"] = algs;
  return j;
}

std::string config_hash(const json& resolved) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : resolved.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

std::vector<Algorithm> default_algorithms(Problem problem, MetricChoice metric) {
  using A = Algorithm;
  if (problem == Problem::SPR) {
    if (metric == MetricChoice::Gaussian) return {A::LM, A::PLM, A::NCG, A::PNCG, A::NAG};
    if (metric == MetricChoice::Poisson) return {A::LM, A::PLM, A::NCG, A::PNCG};
    return {A::LM, A::PLM};
  }
  if (metric == MetricChoice::Gaussian) return {A::LMA, A::PLMA, A::PLMJ, A::EPIE, A::PHEBIE, A::ADMM};
  if (metric == MetricChoice::Poisson) return {A::LMA, A::PLMA, A::PLMJ, A::ADMM};
  return {A::LMA, A::PLMA, A::PLMJ};
}

// ---- commands ------------------------------------------------------------------------------------------------------

std::size_t resolve_threads(std::optional<std::size_t> flag) {
  if (flag) {
    if (*flag == 0) throw ConfigError("--threads must be at least 1");
    return *flag;
  }
  if (const char* env = std::getenv("PTYCHO_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("PTYCHO_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return 1;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex guard;
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(guard);
        if (!first) first = std::current_exception();
        next = n;
      }
    }
  };
  const std::size_t count = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (first) std::rethrow_exception(first);
}

void cmd_simulate(const Options& options) {
  Config c = resolve_config(options);
  if (options.seed) c.experiment.noise_seed = *options.seed;
  c.dataset.reset();
  const Dataset d = make_dataset(c.experiment);
  save_dataset(options.out_dir, d);
  write_manifest(options.out_dir, "simulate", c,
                 {{"patterns", d.geometry.count()}, {"fluence_per_pixel", fluence_per_pixel(c.experiment)}});
  std::ostringstream msg;
  msg << "wrote " << d.geometry.count() << " patterns of " << c.experiment.probe.rows << "x"
            << c.experiment.probe.cols << " to " << options.out_dir.string() << "\n"
            << "probe photons " << c.experiment.photons << ", mean dose " << std::setprecision(4)
            << fluence_per_pixel(c.experiment) << " photons per object pixel\n";
  std::cout << msg.str();
}

void cmd_reconstruct(const Options& options) {
  Config c = resolve_config(options);
  if (options.seed) c.run.seed = *options.seed;
  validate_run(c.run);
  const Dataset d = dataset_for(c);
  check_consistent(d, c.experiment);
  ensure_dir(options.out_dir);
  const SolverResult r = run_reconstruction(d, c.experiment, c.run);
  write_grid(options.out_dir / "object", r.state.object);
  write_grid(options.out_dir / "probe", r.state.probe);
  write_text(options.out_dir / "trace.csv", trace_csv(r.trace, c.run.algorithm, c.run.problem));
  write_previews(options.out_dir, "object", crop_center(r.state.object, c.experiment.inner));
  const TraceRow& last = r.trace.rows.back();
  write_manifest(options.out_dir, "reconstruct", c,
                 {{"stop", stop_name(r.stop)}, {"iterations", last.iteration}, {"final_f", last.f},
                  {"final_eps_O", cell(last.eps_object)}, {"flops", last.cumulative_flops}});
  std::ostringstream msg;
  msg << to_string(c.run.algorithm) << " stopped after " << last.iteration << " iterations ("
            << stop_name(r.stop) << "), f = " << std::setprecision(8) << last.f << ", eps_O = " << last.eps_object
      << "\n";
  std::cout << msg.str();
}

void cmd_benchmark(const Options& options) {
  Config c = resolve_config(options);
  const std::uint64_t first_seed = options.seed.value_or(0);
  std::vector<Algorithm> algorithms =
      c.algorithms.empty() ? default_algorithms(c.run.problem, c.run.metric) : c.algorithms;

  struct Entry {
    std::string label;
    RunSpec spec;
  };
  std::vector<Entry> entries;
  for (Algorithm a : algorithms) {
    RunSpec spec = c.run;
    spec.algorithm = a;
    if (a == Algorithm::ADMM) {
      for (double rho : c.admm_rhos) {
        spec.admm_rho = rho;
        entries.push_back({rho_label(rho), spec});
      }
    } else {
      entries.push_back({to_string(a), spec});
    }
  }
  for (const Entry& e : entries) validate_run(e.spec);

  const Dataset d = dataset_for(c);
  check_consistent(d, c.experiment);
  ensure_dir(options.out_dir);
  const std::size_t length = c.run.max_iters;
  const std::size_t jobs = entries.size() * c.seed_count;
  std::vector<SolverResult> results(jobs);
  parallel_for(jobs, resolve_threads(options.threads), [&](std::size_t i) {
    RunSpec spec = entries[i / c.seed_count].spec;
    spec.seed = first_seed + i % c.seed_count;
    spec.max_iters = length;
    results[i] = run_reconstruction(d, c.experiment, spec);
  });

  std::ostringstream curves, summary;
  curves << "algorithm,iter,mean_eps_O,mean_eps_P,cum_flops\n";
  summary << "algorithm,converged_iter,flops_to_convergence,final_mean_eps_O,final_mean_eps_P\n";
  const double tol = c.mean_tolerance.value_or(c.eps_c);
  for (std::size_t e = 0; e < entries.size(); ++e) {
    std::vector<SolverResult> runs(std::make_move_iterator(results.begin() + e * c.seed_count),
                                   std::make_move_iterator(results.begin() + (e + 1) * c.seed_count));
    const Aggregate agg = aggregate_runs(std::move(runs), c.run.problem, length, c.window, c.eps_c, tol);
    const bool blind = c.run.problem == Problem::BPR;
    for (std::size_t t = 0; t <= length; ++t) {
      curves << entries[e].label << ',' << t << ',' << cell(agg.mean_eps_object[t]) << ','
             << (blind ? cell(agg.mean_eps_probe[t]) : "") << ',' << cell(agg.mean_flops[t]) << '\n';
    }
    summary << entries[e].label << ',' << (agg.converged ? std::to_string(*agg.converged) : "") << ','
            << cell(agg.flops_to_convergence) << ',' << cell(agg.mean_eps_object.back()) << ','
            << (blind ? cell(agg.mean_eps_probe.back()) : "") << '\n';
    write_previews(options.out_dir, entries[e].label, crop_center(agg.runs.front().state.object, c.experiment.inner));
    std::ostringstream msg;
    msg << std::left << std::setw(16) << entries[e].label << " converged at "
              << (agg.converged ? std::to_string(*agg.converged) : std::string("-")) << ", final <eps_O> "
              << std::setprecision(4) << agg.mean_eps_object.back() << "\n";
    std::cout << msg.str();
  }
  write_text(options.out_dir / "benchmark.csv", curves.str());
  write_text(options.out_dir / "summary.csv", summary.str());
  json labels = json::array();
  for (const Entry& e : entries) labels.push_back(e.label);
  write_manifest(options.out_dir, "benchmark", c,
                 {{"runs", labels}, {"init_seeds", {first_seed, first_seed + c.seed_count - 1}}});
}

int run(int argc, char** argv) {
  CLI::App app{"Matrix-free Levenberg-Marquardt ptychographic reconstruction"};
  app.require_subcommand(1);
  Options o;
  std::string config, out_dir = ".";
  std::uint64_t seed = 0;
  std::string algorithm, metric, problem;
  std::size_t max_iters = 0, threads = 0;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Flat JSON configuration file");
    sub->add_option("--out-dir", out_dir, "Output directory");
    sub->add_option("--seed", seed, "Noise seed (simulate) or initial-guess seed (reconstruct, benchmark)");
    sub->add_option("--algorithm", algorithm, "lm, plm, lm-a, plm-a, plm-j, epie, ncg, pncg, nag, phebie, admm");
    sub->add_option("--metric", metric, "gaussian, poisson, poisson-surrogate");
    sub->add_option("--problem", problem, "spr (known probe) or bpr (blind)");
    sub->add_option("--max-iters", max_iters, "Outer iterations");
    sub->add_option("--threads", threads, "Parallel runs (default PTYCHO_THREADS or 1)");
  };
  CLI::App* simulate = app.add_subcommand("simulate", "Synthesize a noisy dataset");
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "Run one reconstruction");
  CLI::App* benchmark = app.add_subcommand("benchmark", "Sweep algorithms over initial guesses");
  for (CLI::App* sub : {simulate, reconstruct, benchmark}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }
  CLI::App* chosen = app.get_subcommands().front();
  const auto given = [&](const char* flag) { return chosen->count(flag) > 0; };
  if (given("--config")) o.config_path = config;
  o.out_dir = out_dir;
  if (given("--seed")) o.seed = seed;
  if (given("--algorithm")) o.algorithm = algorithm;
  if (given("--metric")) o.metric = metric;
  if (given("--problem")) o.problem = problem;
  if (given("--max-iters")) o.max_iters = max_iters;
  if (given("--threads")) o.threads = threads;

  try {
    if (chosen == simulate) cmd_simulate(o);
    else if (chosen == reconstruct) cmd_reconstruct(o);
    else cmd_benchmark(o);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoExit;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const SolverError& e) {
    std::cerr << "solver aborted: " << e.what() << "\n";
    return kSolverExit;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid setting: " << e.what() << "\n";
    return kConfigExit;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace ptycho::cli
