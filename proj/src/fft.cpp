#include "ptycho/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace ptycho {
namespace {

// FFTW planning is not thread-safe; plans are created under this mutex and never destroyed.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// FFTW_ESTIMATE keeps plan selection deterministic across processes.
void* float_plan(Shape shape, int sign) {
  static std::map<std::tuple<std::size_t, std::size_t, int>, fftwf_plan> cache;
  std::lock_guard lock(planner_mutex());
  const auto key = std::make_tuple(shape.rows, shape.cols, sign);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto* buf = fftwf_alloc_complex(shape.size());
  fftwf_plan plan =
      fftwf_plan_dft_2d(static_cast<int>(shape.rows), static_cast<int>(shape.cols), buf, buf, sign, FFTW_ESTIMATE);
  fftwf_free(buf);
  cache.emplace(key, plan);
  return plan;
}

fftw_plan double_plan(Shape shape, int sign) {
  static std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> cache;
  std::lock_guard lock(planner_mutex());
  const auto key = std::make_tuple(shape.rows, shape.cols, sign);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto* buf = fftw_alloc_complex(shape.size());
  fftw_plan plan =
      fftw_plan_dft_2d(static_cast<int>(shape.rows), static_cast<int>(shape.cols), buf, buf, sign, FFTW_ESTIMATE);
  fftw_free(buf);
  cache.emplace(key, plan);
  return plan;
}

// SIMD-aligned scratch so the plans can use vector codelets whatever the caller's alignment.
template <typename Complex, typename Alloc, typename Free>
Complex* scratch(std::size_t n, Alloc alloc, Free release) {
  struct Buffer {
    Complex* data = nullptr;
    std::size_t size = 0;
    Free release;
    ~Buffer() {
      if (data) release(data);
    }
  };
  thread_local Buffer buf{nullptr, 0, release};
  if (buf.size < n) {
    if (buf.data) release(buf.data);
    buf.data = alloc(n);
    buf.size = n;
  }
  return buf.data;
}

void run_float(void* plan, std::span<const cfloat> in, std::span<cfloat> out, float scale) {
  auto* work = scratch<fftwf_complex>(in.size(), fftwf_alloc_complex, fftwf_free);
  std::copy(in.begin(), in.end(), reinterpret_cast<cfloat*>(work));
  fftwf_execute_dft(static_cast<fftwf_plan>(plan), work, work);
  const cfloat* w = reinterpret_cast<const cfloat*>(work);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] * scale;
}

}  // namespace

UnitaryFft2d::UnitaryFft2d(Shape shape)
    : shape_(shape),
      forward_plan_(float_plan(shape, FFTW_FORWARD)),
      inverse_plan_(float_plan(shape, FFTW_BACKWARD)),
      scale_(static_cast<float>(1.0 / std::sqrt(static_cast<double>(shape.size())))) {}

void UnitaryFft2d::forward(std::span<const cfloat> in, std::span<cfloat> out) const {
  if (in.size() != shape_.size() || out.size() != shape_.size()) throw std::invalid_argument("fft size mismatch");
  run_float(forward_plan_, in, out, scale_);
}

void UnitaryFft2d::inverse(std::span<const cfloat> in, std::span<cfloat> out) const {
  if (in.size() != shape_.size() || out.size() != shape_.size()) throw std::invalid_argument("fft size mismatch");
  run_float(inverse_plan_, in, out, scale_);
}

void unitary_fft2d(std::span<std::complex<double>> data, Shape shape, bool inverse) {
  if (data.size() != shape.size()) throw std::invalid_argument("fft size mismatch");
  auto plan = double_plan(shape, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  auto* work = scratch<fftw_complex>(data.size(), fftw_alloc_complex, fftw_free);
  std::copy(data.begin(), data.end(), reinterpret_cast<std::complex<double>*>(work));
  fftw_execute_dft(plan, work, work);
  const double s = 1.0 / std::sqrt(static_cast<double>(shape.size()));
  const auto* w = reinterpret_cast<const std::complex<double>*>(work);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = w[i] * s;
}

const char* fft_backend_version() { return fftw_version; }

}  // namespace ptycho
