#pragma once

#include <cmath>
#include <cstdint>

namespace ptycho {

/// Per-event flop costs used to compare algorithms independently of wall-clock time.
struct CostModel {
  std::uint64_t complex_multiply = 6;
  std::uint64_t complex_add = 2;
  std::uint64_t real_op = 1;

  /// 5 n log2(n) for an n-point complex FFT.
  std::uint64_t fft(std::uint64_t n) const {
    if (n < 2) return 0;
    return static_cast<std::uint64_t>(std::llround(5.0 * static_cast<double>(n) * std::log2(static_cast<double>(n))));
  }
};

/// Accumulates flops charged by the numerical kernels.
class FlopCounter {
 public:
  explicit FlopCounter(CostModel model = {}) : model_(model) {}

  const CostModel& model() const { return model_; }
  std::uint64_t total() const { return total_; }
  void reset() { total_ = 0; }

  void add(std::uint64_t flops) { total_ += flops; }
  void fft(std::uint64_t n, std::uint64_t count = 1) { total_ += count * model_.fft(n); }
  void complex_multiply(std::uint64_t count) { total_ += count * model_.complex_multiply; }
  void complex_add(std::uint64_t count) { total_ += count * model_.complex_add; }
  void real_ops(std::uint64_t count) { total_ += count * model_.real_op; }

 private:
  CostModel model_;
  std::uint64_t total_ = 0;
};

/// Null-safe helpers so kernels can take an optional counter.
inline void charge_fft(FlopCounter* c, std::uint64_t n, std::uint64_t count = 1) {
  if (c) c->fft(n, count);
}
inline void charge_cmul(FlopCounter* c, std::uint64_t count) {
  if (c) c->complex_multiply(count);
}
inline void charge_cadd(FlopCounter* c, std::uint64_t count) {
  if (c) c->complex_add(count);
}
inline void charge_real(FlopCounter* c, std::uint64_t count) {
  if (c) c->real_ops(count);
}

}  // namespace ptycho
