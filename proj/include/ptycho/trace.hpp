#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "ptycho/core.hpp"

namespace ptycho {

inline constexpr double kNotRecorded = std::numeric_limits<double>::quiet_NaN();

/// One iteration of a solver run. Row 0 describes the initial guess.
struct TraceRow {
  std::size_t iteration = 0;
  double f = kNotRecorded;          // objective after the iteration
  double f_before = kNotRecorded;   // objective before the step, same surrogate offset
  double eps_object = kNotRecorded;
  double eps_probe = kNotRecorded;
  double lambda = kNotRecorded;
  std::size_t cg_iters = 0;
  std::size_t lambda_updates = 0;
  std::size_t ls_iters = 0;
  std::uint64_t cumulative_flops = 0;
};

struct ConvergenceTrace {
  std::vector<TraceRow> rows;

  /// Rows must be ordered by iteration with nondecreasing flops.
  void append(const TraceRow& row);
  std::vector<double> eps_object_series() const;
  std::vector<double> eps_probe_series() const;
};

/// Called after every iteration (and once for the initial guess) to fill in error columns.
using Observer = std::function<void(const ModelState&, TraceRow&)>;

/// Why a solver stopped before its iteration budget.
enum class StopReason { IterationLimit, Converged, Stagnated };

}  // namespace ptycho
