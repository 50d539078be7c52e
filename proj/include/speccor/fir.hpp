#pragma once

// Linear-phase (Type I) FIR realization of correction coefficients, designed
// by least squares on the STFT bin-centre grid.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "speccor/correction.hpp"
#include "speccor/dsp.hpp"

namespace speccor {

struct FirFilter {
  std::vector<double> taps;  // odd length, symmetric
  int sample_rate = 0;
  std::size_t target_bins = 0;

  std::size_t num_taps() const { return taps.size(); }
  std::size_t group_delay() const { return (taps.size() - 1) / 2; }

  void validate() const {
    require(taps.size() % 2 == 1, "taps must be odd");
    require(sample_rate > 0, "filter sample_rate must be positive");
    const std::size_t n = taps.size();
    for (std::size_t i = 0; i < n; ++i) {
      require(std::isfinite(taps[i]), "filter taps must be finite");
      require(std::abs(taps[i] - taps[n - 1 - i]) <= 1e-12, "filter taps are not symmetric");
    }
  }
};

struct FirDesignOptions {
  double clamp_db = 40.0;  // targets limited to [-clamp_db, +clamp_db] before design
};

inline std::vector<double> clamp_gains(std::span<const double> gains, double clamp_db) {
  const double hi = std::pow(10.0, clamp_db / 20.0);
  const double lo = 1.0 / hi;
  std::vector<double> out(gains.begin(), gains.end());
  for (double& g : out) g = std::clamp(g, lo, hi);
  return out;
}

namespace detail {

// sum_{j=0}^{F-1} cos(m * pi * j / (F - 1))
inline double grid_cosine_sum(long m, std::size_t num_bins) {
  const long period = 2 * static_cast<long>(num_bins - 1);
  if (m % period == 0) return static_cast<double>(num_bins);
  return (m % 2 == 0) ? 1.0 : 0.0;
}

}  // namespace detail

// Least-squares Type I design. The amplitude response
//   A(w) = a_0 + sum_{k=1}^{M} a_k cos(k w),  M = (num_taps - 1) / 2
// is fit with uniform weight to the (clamped) gains at w_j = pi j / (F - 1),
// i.e. the bin centres j * sr / n_fft. The Gram matrix of the cosine basis on
// that grid has a closed form, so only the right-hand side is accumulated.
inline FirFilter design_ls(const CorrectionCoefficients& c, std::size_t num_taps,
                           const FirDesignOptions& opts = {}) {
  require(num_taps % 2 == 1, "taps must be odd");
  require(num_taps >= 3, "taps must be >= 3");
  for (double g : c.gains) require(std::isfinite(g), "gains must be finite");
  c.validate();
  require(num_taps <= static_cast<std::size_t>(c.n_fft) + 1, "taps must not exceed n_fft + 1");

  const std::size_t num_bins = c.num_bins();
  const std::size_t order = (num_taps - 1) / 2;
  const auto target = clamp_gains(c.gains, opts.clamp_db);

  // cos(pi * i / (F - 1)) for i in [0, 2(F - 1)), indexed by (k * j) mod period.
  const std::size_t period = 2 * (num_bins - 1);
  std::vector<double> cos_table(period);
  for (std::size_t i = 0; i < period; ++i)
    cos_table[i] = std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(num_bins - 1));

  Eigen::MatrixXd gram(order + 1, order + 1);
  Eigen::VectorXd rhs(order + 1);
  for (std::size_t k = 0; k <= order; ++k) {
    for (std::size_t l = 0; l <= order; ++l) {
      const long diff = static_cast<long>(k) - static_cast<long>(l);
      const long sum = static_cast<long>(k + l);
      gram(k, l) = 0.5 * (detail::grid_cosine_sum(diff, num_bins) + detail::grid_cosine_sum(sum, num_bins));
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < num_bins; ++j) acc += target[j] * cos_table[(k * j) % period];
    rhs(k) = acc;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  require(llt.info() == Eigen::Success, "least-squares system is singular");
  const Eigen::VectorXd a = llt.solve(rhs);

  FirFilter fir;
  fir.taps.assign(num_taps, 0.0);
  fir.taps[order] = a(0);
  for (std::size_t k = 1; k <= order; ++k) {
    fir.taps[order - k] = 0.5 * a(static_cast<Eigen::Index>(k));
    fir.taps[order + k] = 0.5 * a(static_cast<Eigen::Index>(k));
  }
  fir.sample_rate = c.sample_rate;
  fir.target_bins = num_bins;
  return fir;
}

// |sum_n taps[n] e^{-i 2 pi f n / sr}| at each grid frequency.
inline std::vector<double> frequency_response(const FirFilter& fir, std::span<const double> grid_hz) {
  require(fir.sample_rate > 0, "filter sample_rate must be positive");
  std::vector<double> out;
  out.reserve(grid_hz.size());
  for (double f : grid_hz) {
    require(f >= 0.0 && f <= fir.sample_rate / 2.0, "frequency out of range [0, sr/2]");
    const double w = 2.0 * std::numbers::pi * f / fir.sample_rate;
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < fir.taps.size(); ++n)
      acc += fir.taps[n] * std::polar(1.0, -w * static_cast<double>(n));
    out.push_back(std::abs(acc));
  }
  return out;
}

// Bin-centre frequencies k * sr / n_fft for k = 0 .. n_fft/2.
inline std::vector<double> bin_grid(int n_fft, int sample_rate) {
  std::vector<double> grid(static_cast<std::size_t>(n_fft) / 2 + 1);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = bin_frequency(k, n_fft, sample_rate);
  return grid;
}

// Convolves with the filter. With compensate_delay, drops the first
// group_delay() output samples and truncates to the input length so the result
// is time-aligned with `w`.
inline Waveform apply_filter(const FirFilter& fir, const Waveform& w, bool compensate_delay = true) {
  require(fir.sample_rate == w.sample_rate, "sample-rate mismatch between filter and audio");
  auto out = convolve(w, fir.taps);
  if (compensate_delay) {
    const auto delay = static_cast<std::ptrdiff_t>(std::min(fir.group_delay(), out.samples.size()));
    out.samples.erase(out.samples.begin(), out.samples.begin() + delay);
    out.samples.resize(w.size());
  }
  return out;
}

}  // namespace speccor
