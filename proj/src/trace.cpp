#include "ptycho/trace.hpp"

#include <stdexcept>

namespace ptycho {

void ConvergenceTrace::append(const TraceRow& row) {
  if (!rows.empty()) {
    if (row.iteration <= rows.back().iteration) throw std::invalid_argument("trace rows must be ordered by iteration");
    if (row.cumulative_flops < rows.back().cumulative_flops) {
      throw std::invalid_argument("cumulative flops must be nondecreasing");
    }
  }
  rows.push_back(row);
}

std::vector<double> ConvergenceTrace::eps_object_series() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.eps_object);
  return out;
}

std::vector<double> ConvergenceTrace::eps_probe_series() const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.eps_probe);
  return out;
}

}  // namespace ptycho
