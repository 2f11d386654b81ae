#pragma once

#include <cmath>
#include <span>

#include "ptycho/core.hpp"

namespace ptycho {

enum class MetricKind { Gaussian, Poisson };

// Per-pixel kernels. Magnitude-based forms take zeta = sqrt(h), intensity-based forms take h.
namespace pixel {

inline double loss(double zeta, double y, MetricKind kind) {
  if (kind == MetricKind::Gaussian) {
    const double r = zeta - std::sqrt(y);
    return 0.5 * r * r;
  }
  const double h = zeta * zeta;
  return y > 0.0 ? h - y * std::log(h) : h;
}

/// loss minus its minimum over zeta; nonnegative and free of large cancellations.
inline double excess(double h, double y, MetricKind kind) {
  if (kind == MetricKind::Gaussian) {
    const double s = std::sqrt(h) + std::sqrt(y);
    const double d = (h - y) / s;
    return 0.5 * d * d;
  }
  return y > 0.0 ? (h - y) - y * std::log(h / y) : h;
}

/// min over zeta of loss(zeta, y).
inline double loss_floor(double y, MetricKind kind) {
  if (kind == MetricKind::Gaussian || y <= 0.0) return 0.0;
  return y - y * std::log(y);
}

inline float grad_magnitude(float zeta, float y, MetricKind kind) {
  if (kind == MetricKind::Gaussian) return zeta - std::sqrt(y);
  return 2.0f * zeta - 2.0f * y / zeta;
}

inline float hess_magnitude(float zeta, float y, MetricKind kind) {
  if (kind == MetricKind::Gaussian) return 1.0f;
  return 2.0f * (1.0f + y / (zeta * zeta));
}

inline float grad_intensity(float h, float y, MetricKind kind) {
  if (kind == MetricKind::Gaussian) return 0.5f * (1.0f - std::sqrt(y) / std::sqrt(h));
  return 1.0f - y / h;
}

inline float hess_intensity(float h, float y, MetricKind kind) {
  if (kind == MetricKind::Gaussian) return 0.25f * std::sqrt(y) / (h * std::sqrt(h));
  return y / (h * h);
}

}  // namespace pixel

/// Sum of the magnitude-based loss. Throws on shape mismatch or nonpositive zeta.
double metric_value(std::span<const float> zeta, std::span<const float> y, MetricKind kind);
double metric_value(const RealStack& zeta, const RealStack& y, MetricKind kind);

/// Same value written in terms of h = zeta^2.
double metric_value_intensity(const RealStack& h, const RealStack& y, MetricKind kind);

/// Sum of pixel::loss_floor over the data; metric_value - metric_floor >= 0.
double metric_floor(std::span<const float> y, MetricKind kind);

RealStack metric_grad_magnitude(const RealStack& zeta, const RealStack& y, MetricKind kind);
RealStack metric_hess_diag_magnitude(const RealStack& zeta, const RealStack& y, MetricKind kind);
RealStack metric_grad_intensity(const RealStack& h, const RealStack& y, MetricKind kind);
RealStack metric_hess_diag_intensity(const RealStack& h, const RealStack& y, MetricKind kind);

}  // namespace ptycho
