#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

namespace spatial_diar {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace detail {

// FFTW planning is not thread-safe; execution on a finished plan is. Plans are cached per
// (length, direction) and use FFTW_ESTIMATE, so results do not depend on timing.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  fftw_plan get(std::size_t n, bool inverse) {
    std::lock_guard lock(mutex_);
    auto& plan = plans_[{n, inverse}];
    if (!plan) {
      std::vector<std::complex<double>> scratch(n);
      auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
      plan = fftw_plan_dft_1d(int(n), p, p, inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
      if (!plan) throw std::runtime_error("FFTW could not create a plan");
    }
    return plan;
  }

  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;

 private:
  FftPlans() = default;
  ~FftPlans() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

}  // namespace detail

/// In-place complex DFT. inverse=true computes the unscaled inverse transform.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false) {
  if (a.empty()) throw std::invalid_argument("FFT of an empty buffer");
  auto* p = reinterpret_cast<fftw_complex*>(a.data());
  fftw_execute_dft(detail::FftPlans::instance().get(a.size(), inverse), p, p);
}

}  // namespace spatial_diar
