#pragma once

#include <complex>
#include <span>

#include "ptycho/core.hpp"

namespace ptycho {

/// Unitary (1/sqrt(n)-scaled) 2D DFT of a fixed shape, single precision.
/// Plans are created once per shape and shared; execution is thread-safe.
class UnitaryFft2d {
 public:
  explicit UnitaryFft2d(Shape shape);

  Shape shape() const { return shape_; }

  /// out = F in. `in` and `out` may alias.
  void forward(std::span<const cfloat> in, std::span<cfloat> out) const;
  /// out = F^H in. `in` and `out` may alias.
  void inverse(std::span<const cfloat> in, std::span<cfloat> out) const;

 private:
  Shape shape_;
  void* forward_plan_;
  void* inverse_plan_;
  float scale_;
};

/// Unitary 2D DFT in double precision (used by registration and simulation helpers).
void unitary_fft2d(std::span<std::complex<double>> data, Shape shape, bool inverse);

/// Version string of the FFT library in use.
const char* fft_backend_version();

}  // namespace ptycho
