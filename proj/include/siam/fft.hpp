#pragma once

#include "siam/types.hpp"

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace siam {

namespace detail {
// FFTW's planner is not re-entrant.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Real-to-complex FFT of fixed size n, producing n/2+1 bins. Not copyable; one per thread.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    if (!plan_) throw std::runtime_error("RealFft: planning failed");
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }

  std::size_t size() const { return n_; }
  std::span<double> input() { return {in_, n_}; }

  /// Transforms input() and returns the n/2+1 spectrum bins.
  std::span<const Complex> execute() {
    fftw_execute(plan_);
    return {reinterpret_cast<const Complex*>(out_), n_ / 2 + 1};
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

/// Complex-to-real inverse FFT (unnormalized) of size n from n/2+1 bins.
class InverseRealFft {
 public:
  explicit InverseRealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_complex(n / 2 + 1);
    out_ = fftw_alloc_real(n);
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    if (!plan_) throw std::runtime_error("InverseRealFft: planning failed");
  }
  InverseRealFft(const InverseRealFft&) = delete;
  InverseRealFft& operator=(const InverseRealFft&) = delete;
  ~InverseRealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }

  std::span<Complex> input() { return {reinterpret_cast<Complex*>(in_), n_ / 2 + 1}; }
  std::span<const double> execute() {
    fftw_execute(plan_);
    return {out_, n_};
  }

 private:
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  double* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace siam
