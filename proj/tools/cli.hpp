#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptycho/harness.hpp"

namespace ptycho::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigExit = 2, kIoExit = 3, kSolverExit = 4 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- arrays: raw little-endian payload plus a JSON sidecar -----------------------------------------------------

template <typename T>
struct Array {
  std::vector<std::size_t> shape;
  std::vector<T> values;
};

/// Writes `<base>.bin` and `<base>.json`.
void write_real(const fs::path& base, std::span<const float> values, const std::vector<std::size_t>& shape);
void write_complex(const fs::path& base, std::span<const cfloat> values, const std::vector<std::size_t>& shape);
Array<float> read_real(const fs::path& base);
Array<cfloat> read_complex(const fs::path& base);

void write_grid(const fs::path& base, const ComplexGrid& grid);
ComplexGrid read_grid(const fs::path& base);

// ---- datasets ----------------------------------------------------------------------------------------------------

/// Truth object and probe, geometry, patterns and background in `dir`.
void save_dataset(const fs::path& dir, const Dataset& dataset);
Dataset load_dataset(const fs::path& dir);

// ---- traces and previews -----------------------------------------------------------------------------------------

/// Columns iter,f,eps_O,eps_P,lambda,cg_iters,ls_iters,flops; cells that do not apply to the solver stay empty.
std::string trace_csv(const ConvergenceTrace& trace, Algorithm algorithm, Problem problem);

/// Binary 16-bit PGM (P5, big-endian samples); values are mapped linearly from [lo, hi] and clamped.
void write_pgm16(const fs::path& path, const RealGrid& image, double lo, double hi);
/// |O| mapped from [0, max|O|] and arg(O) mapped from [-pi, pi).
void write_previews(const fs::path& dir, const std::string& prefix, const ComplexGrid& object);

// ---- configuration -------------------------------------------------------------------------------------------------

struct Config {
  ExperimentConfig experiment;
  RunSpec run;
  std::optional<fs::path> dataset;      // load instead of synthesizing
  std::vector<Algorithm> algorithms;    // benchmark sweep; empty selects the defaults for the problem and metric
  std::size_t seed_count = 5;
  std::size_t window = 100;
  double eps_c = 1e-3;
  std::optional<double> mean_tolerance;  // defaults to eps_c
  std::vector<double> admm_rhos = admm_penalty_grid();
};

/// Flat JSON object; unknown keys and nested values are configuration errors.
Config parse_config(const json& j);
Config load_config(const fs::path& path);
json to_json(const Config& config);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const json& resolved);

std::vector<Algorithm> default_algorithms(Problem problem, MetricChoice metric);

// ---- commands ------------------------------------------------------------------------------------------------------

struct Options {
  std::optional<fs::path> config_path;
  fs::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algorithm;
  std::optional<std::string> metric;
  std::optional<std::string> problem;
  std::optional<std::size_t> max_iters;
  std::optional<std::size_t> threads;
};

/// Flag value, else PTYCHO_THREADS, else 1.
std::size_t resolve_threads(std::optional<std::size_t> flag);

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception is rethrown after all finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

void cmd_simulate(const Options& options);
void cmd_reconstruct(const Options& options);
void cmd_benchmark(const Options& options);

/// Parses the command line, dispatches and maps failures to exit codes.
int run(int argc, char** argv);

}  // namespace ptycho::cli
