#pragma once

// Thin RAII layer over FFTW3 (double precision). Each plan owns its buffers,
// so an instance must not be shared between threads; distinct instances may
// be used concurrently.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>
#include <vector>

#include "speccor/error.hpp"

namespace speccor::fft {

namespace detail {

// The FFTW planner is not re-entrant.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    speccor::detail::require(n >= 2, "fft size must be >= 2");
    real_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    spec_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(detail::planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  ~RealFft() {
    {
      std::lock_guard lock(detail::planner_mutex());
      fftw_destroy_plan(forward_);
      fftw_destroy_plan(inverse_);
    }
    fftw_free(real_);
    fftw_free(spec_);
  }

  std::size_t size() const { return n_; }
  std::size_t num_bins() const { return n_ / 2 + 1; }

  // Unnormalized forward transform; `in` has size() samples, `out` num_bins().
  void forward(std::span<const double> in, std::span<std::complex<double>> out) {
    std::copy(in.begin(), in.end(), real_);
    fftw_execute(forward_);
    for (std::size_t k = 0; k < num_bins(); ++k) out[k] = {spec_[k][0], spec_[k][1]};
  }

  // Inverse transform scaled by 1/n, so inverse(forward(x)) == x.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    for (std::size_t k = 0; k < num_bins(); ++k) {
      spec_[k][0] = in[k].real();
      spec_[k][1] = in[k].imag();
    }
    fftw_execute(inverse_);
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * scale;
  }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

// Type-I DCT (FFTW REDFT00), unnormalized:
//   y[k] = x[0] + (-1)^k x[n-1] + 2 * sum_{j=1}^{n-2} x[j] cos(pi j k / (n-1)).
// This is the DFT of the even extension of x to length 2(n-1).
class Dct1 {
 public:
  explicit Dct1(std::size_t n) : n_(n) {
    speccor::detail::require(n >= 2, "DCT-I size must be >= 2");
    buf_in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    buf_out_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    std::lock_guard lock(detail::planner_mutex());
    plan_ = fftw_plan_r2r_1d(static_cast<int>(n), buf_in_, buf_out_, FFTW_REDFT00, FFTW_ESTIMATE);
  }

  Dct1(const Dct1&) = delete;
  Dct1& operator=(const Dct1&) = delete;

  ~Dct1() {
    {
      std::lock_guard lock(detail::planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(buf_in_);
    fftw_free(buf_out_);
  }

  std::size_t size() const { return n_; }

  void execute(std::span<const double> in, std::span<double> out) {
    std::copy(in.begin(), in.end(), buf_in_);
    fftw_execute(plan_);
    std::copy(buf_out_, buf_out_ + n_, out.begin());
  }

 private:
  std::size_t n_;
  double* buf_in_ = nullptr;
  double* buf_out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace speccor::fft
