#include "ptycho/metrics.hpp"

#include <stdexcept>

namespace ptycho {
namespace {

void check_pair(std::span<const float> a, std::span<const float> y) {
  if (a.size() != y.size()) throw std::invalid_argument("metric: shape mismatch between model and data");
}

void check_positive(float v) {
  if (!(v > 0.0f)) throw std::invalid_argument("metric: model values must be strictly positive");
}

template <typename Fn>
RealStack elementwise(const RealStack& model, const RealStack& y, Fn fn) {
  if (!model.same_layout(y)) throw std::invalid_argument("metric: shape mismatch between model and data");
  RealStack out(model.count(), model.slice_shape());
  for (std::size_t i = 0; i < model.size(); ++i) {
    check_positive(model[i]);
    out[i] = fn(model[i], y[i]);
  }
  return out;
}

}  // namespace

double metric_value(std::span<const float> zeta, std::span<const float> y, MetricKind kind) {
  check_pair(zeta, y);
  double total = 0.0;
  for (std::size_t i = 0; i < zeta.size(); ++i) {
    check_positive(zeta[i]);
    total += pixel::loss(zeta[i], y[i], kind);
  }
  return total;
}

double metric_value(const RealStack& zeta, const RealStack& y, MetricKind kind) {
  if (!zeta.same_layout(y)) throw std::invalid_argument("metric: shape mismatch between model and data");
  return metric_value(zeta.values(), y.values(), kind);
}

double metric_value_intensity(const RealStack& h, const RealStack& y, MetricKind kind) {
  if (!h.same_layout(y)) throw std::invalid_argument("metric: shape mismatch between model and data");
  double total = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    check_positive(h[i]);
    const double hi = h[i];
    const double yi = y[i];
    if (kind == MetricKind::Gaussian) {
      const double r = std::sqrt(hi) - std::sqrt(yi);
      total += 0.5 * r * r;
    } else {
      total += yi > 0.0 ? hi - yi * std::log(hi) : hi;
    }
  }
  return total;
}

double metric_floor(std::span<const float> y, MetricKind kind) {
  double total = 0.0;
  for (float v : y) total += pixel::loss_floor(v, kind);
  return total;
}

RealStack metric_grad_magnitude(const RealStack& zeta, const RealStack& y, MetricKind kind) {
  return elementwise(zeta, y, [kind](float z, float d) { return pixel::grad_magnitude(z, d, kind); });
}

RealStack metric_hess_diag_magnitude(const RealStack& zeta, const RealStack& y, MetricKind kind) {
  return elementwise(zeta, y, [kind](float z, float d) { return pixel::hess_magnitude(z, d, kind); });
}

RealStack metric_grad_intensity(const RealStack& h, const RealStack& y, MetricKind kind) {
  return elementwise(h, y, [kind](float v, float d) { return pixel::grad_intensity(v, d, kind); });
}

RealStack metric_hess_diag_intensity(const RealStack& h, const RealStack& y, MetricKind kind) {
  return elementwise(h, y, [kind](float v, float d) { return pixel::hess_intensity(v, d, kind); });
}

}  // namespace ptycho
