#pragma once

// Double-precision reference implementations used only by tests.
// Everything here is written independently of the library kernels: a naive DFT,
// explicit windowing, central finite differences and dense matrices.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <vector>

#include "ptycho/core.hpp"
#include "ptycho/matfree.hpp"
#include "ptycho/metrics.hpp"

namespace oracle {

using cd = std::complex<double>;

struct Problem {
  ptycho::Shape object_shape;
  ptycho::Shape probe_shape;
  std::vector<ptycho::Offset> offsets;
  std::vector<cd> object;
  std::vector<cd> probe;
  std::vector<double> background;  // one per detector pixel
  double surrogate = 0.0;
  std::vector<double> y;  // K*M

  std::size_t m() const { return probe_shape.size(); }
  std::size_t n() const { return object_shape.size(); }
  std::size_t k() const { return offsets.size(); }
};

/// Random tiny instance with Poisson-like data drawn around the model at a perturbed truth.
Problem random_problem(std::uint64_t seed, ptycho::Shape object_shape, ptycho::Shape probe_shape,
                       std::vector<ptycho::Offset> offsets, double surrogate = 0.0);

// Conversions to library types (float).
ptycho::ScanGeometry geometry(const Problem& p);
ptycho::ModelState state(const Problem& p);
ptycho::DiffractionStack data(const Problem& p);

/// Real coordinates of the problem's current point in the library layout for `sel`.
Eigen::VectorXd coordinates(const Problem& p, ptycho::VariableSelector sel);

/// zeta (or h when `intensity`) at coordinates x, stacked k-major.
Eigen::VectorXd model(const Problem& p, const Eigen::VectorXd& x, ptycho::VariableSelector sel, bool intensity = false);

double objective(const Problem& p, const Eigen::VectorXd& x, ptycho::VariableSelector sel, ptycho::MetricKind kind);

/// Central-difference Jacobian of `model`.
Eigen::MatrixXd jacobian(const Problem& p, ptycho::VariableSelector sel, bool intensity = false, double step = 1e-6);

/// Central-difference gradient of the objective.
Eigen::VectorXd gradient(const Problem& p, ptycho::VariableSelector sel, ptycho::MetricKind kind, double step = 1e-6);

/// Dense J^T H J with the analytic data-space curvature.
Eigen::MatrixXd ggn(const Problem& p, ptycho::VariableSelector sel, ptycho::MetricKind kind, bool intensity = false);

Eigen::VectorXd to_eigen(const ptycho::RIVector& v);
Eigen::VectorXd to_eigen(const ptycho::RealStack& s);
ptycho::RIVector to_rivector(const Eigen::VectorXd& v);
ptycho::RealStack to_stack(const Eigen::VectorXd& v, std::size_t count, ptycho::Shape shape);

/// ||a - b|| / ||b||
double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace oracle
