#pragma once

// Signal primitives: waveforms, STFT / weighted-overlap-add iSTFT, magnitude
// extraction, log-domain geometric means and linear convolution.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "speccor/error.hpp"
#include "speccor/fft.hpp"

namespace speccor {

using detail::require;

// Dense row-major matrix. Rows are STFT frames, columns are frequency bins.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T init = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, init) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  // Views are lvalue-only: a span into a temporary would dangle.
  std::span<T> row(std::size_t r) & { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const& { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) && = delete;

  std::span<T> values() & { return data_; }
  std::span<const T> values() const& { return data_; }
  std::span<const T> values() && = delete;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    require(sample_rate > 0, "sample_rate must be positive");
    for (double s : samples) require(std::isfinite(s), "waveform contains non-finite samples");
  }
};

struct StftConfig {
  int n_fft = 2048;
  int hop = 512;
  int sample_rate = 44100;
  std::string window = "hann";

  std::size_t num_bins() const { return static_cast<std::size_t>(n_fft) / 2 + 1; }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

struct ComplexSpectrogram {
  Matrix<std::complex<double>> bins;  // frames x (n_fft/2 + 1)
  StftConfig config;

  std::size_t frames() const { return bins.rows(); }
  std::size_t num_bins() const { return bins.cols(); }
};

struct AmplitudeSpectrogram {
  Matrix<double> mags;  // frames x (n_fft/2 + 1), non-negative
  StftConfig config;

  std::size_t frames() const { return mags.rows(); }
  std::size_t num_bins() const { return mags.cols(); }
};

inline constexpr double kAmplitudeFloor = 1e-10;

inline double bin_frequency(std::size_t bin, int n_fft, int sample_rate) {
  return static_cast<double>(bin) * sample_rate / n_fft;
}

// Inclusive bin range whose centre frequencies lie in [lo_hz, hi_hz].
inline std::pair<std::size_t, std::size_t> band_bins(int n_fft, int sample_rate, double lo_hz,
                                                     double hi_hz) {
  const std::size_t num_bins = static_cast<std::size_t>(n_fft) / 2 + 1;
  std::size_t first = num_bins, last = 0;
  for (std::size_t k = 0; k < num_bins; ++k) {
    const double f = bin_frequency(k, n_fft, sample_rate);
    if (f >= lo_hz && f <= hi_hz) {
      first = std::min(first, k);
      last = std::max(last, k);
    }
  }
  require(first <= last, "frequency band contains no bins");
  return {first, last};
}

// Evaluation band used by every tolerance check: 100 Hz to 16 kHz.
inline std::pair<std::size_t, std::size_t> mid_band_bins(int n_fft, int sample_rate) {
  return band_bins(n_fft, sample_rate, 100.0, std::min(16000.0, sample_rate / 2.0));
}

// Periodic windows (the form that overlap-adds to a constant).
inline std::vector<double> make_window(const std::string& name, int n) {
  require(n > 0, "window length must be positive");
  std::vector<double> w(static_cast<std::size_t>(n));
  const double step = 2.0 * std::numbers::pi / n;
  if (name == "hann") {
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(step * i);
  } else if (name == "hamming") {
    for (int i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(step * i);
  } else if (name == "rectangular") {
    std::fill(w.begin(), w.end(), 1.0);
  } else {
    throw ValidationError("unknown window: " + name);
  }
  return w;
}

namespace detail {

inline void validate_stft_config(const StftConfig& cfg) {
  require(cfg.n_fft >= 16 && cfg.n_fft % 2 == 0, "n_fft must be even and >= 16");
  require(cfg.hop >= 1, "hop must be >= 1");
  require(cfg.sample_rate > 0, "sample_rate must be positive");
}

}  // namespace detail

// True when the squared window overlap-adds to a constant at this hop, which
// is the condition for exact weighted-overlap-add resynthesis.
inline bool satisfies_wola(const std::vector<double>& window, int hop) {
  const std::size_t n = window.size();
  const auto h = static_cast<std::size_t>(hop);
  if (h == 0 || h > n) return false;
  double lo = INFINITY, hi = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    double acc = 0.0;
    for (std::size_t j = i; j < n; j += h) acc += window[j] * window[j];
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  return lo > 0.0 && (hi - lo) <= 1e-9 * hi;
}

inline ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  detail::validate_stft_config(cfg);
  require(w.sample_rate == cfg.sample_rate, "waveform sample rate does not match STFT config");
  const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const auto window = make_window(cfg.window, cfg.n_fft);
  require(w.size() >= n_fft, "input too short");

  const std::size_t frames = (w.size() - n_fft) / hop + 1;
  ComplexSpectrogram out{Matrix<std::complex<double>>(frames, cfg.num_bins()), cfg};
  fft::RealFft plan(n_fft);
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = src[i] * window[i];
    plan.forward(frame, out.bins.row(t));
  }
  return out;
}

inline ComplexSpectrogram stft(const Waveform& w, int n_fft, int hop, const std::string& window = "hann") {
  return stft(w, StftConfig{n_fft, hop, w.sample_rate, window});
}

// Weighted overlap-add: each inverse frame is multiplied by the analysis
// window and the sum is divided by the overlapped squared window. Output length
// is (T - 1) * hop + n_fft.
inline Waveform istft(const ComplexSpectrogram& c) {
  const auto& cfg = c.config;
  detail::validate_stft_config(cfg);
  require(c.num_bins() == cfg.num_bins(), "spectrogram bin count does not match n_fft");
  require(c.frames() >= 1, "spectrogram has no frames");
  const auto window = make_window(cfg.window, cfg.n_fft);
  require(satisfies_wola(window, cfg.hop), "reconstruction condition violated");

  const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const std::size_t length = (c.frames() - 1) * hop + n_fft;
  std::vector<double> out(length, 0.0), weight(length, 0.0);
  fft::RealFft plan(n_fft);
  std::vector<double> frame(n_fft);
  for (std::size_t t = 0; t < c.frames(); ++t) {
    plan.inverse(c.bins.row(t), frame);
    double* dst = out.data() + t * hop;
    double* wdst = weight.data() + t * hop;
    for (std::size_t i = 0; i < n_fft; ++i) {
      dst[i] += frame[i] * window[i];
      wdst[i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < length; ++i) {
    if (weight[i] > 1e-300) out[i] /= weight[i];
  }
  return Waveform{std::move(out), cfg.sample_rate};
}

inline AmplitudeSpectrogram amplitude(const ComplexSpectrogram& c) {
  AmplitudeSpectrogram out{Matrix<double>(c.frames(), c.num_bins()), c.config};
  auto dst = out.mags.values();
  auto src = c.bins.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::abs(src[i]);
  return out;
}

// Pairwise (cascade) summation; the reduction tree depends only on the length,
// so results are reproducible for a fixed input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 16) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// Column sums of log(max(m, floor)) with pairwise summation over rows.
inline std::vector<double> column_log_sums(const Matrix<double>& m, double floor = kAmplitudeFloor) {
  const auto sum_rows = [&](auto&& self, std::size_t lo, std::size_t hi) -> std::vector<double> {
    if (hi - lo <= 8) {
      std::vector<double> acc(m.cols(), 0.0);
      for (std::size_t r = lo; r < hi; ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) acc[c] += std::log(std::max(row[c], floor));
      }
      return acc;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    auto left = self(self, lo, mid);
    const auto right = self(self, mid, hi);
    for (std::size_t c = 0; c < left.size(); ++c) left[c] += right[c];
    return left;
  };
  return sum_rows(sum_rows, 0, m.rows());
}

inline double geometric_mean(std::span<const double> values, double floor = kAmplitudeFloor) {
  require(!values.empty(), "geometric_mean of empty input");
  require(floor > 0.0, "floor must be positive");
  std::vector<double> logs(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(std::isfinite(values[i]) && values[i] >= 0.0, "geometric_mean input must be finite and >= 0");
    logs[i] = std::log(std::max(values[i], floor));
  }
  return std::exp(pairwise_sum(logs) / static_cast<double>(logs.size()));
}

inline std::vector<double> convolve_direct(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    double* dst = out.data() + i;
    for (std::size_t j = 0; j < b.size(); ++j) dst[j] += ai * b[j];
  }
  return out;
}

inline std::vector<double> convolve_fft(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t length = a.size() + b.size() - 1;
  std::size_t n = 2;
  while (n < length) n <<= 1;
  fft::RealFft plan(n);
  std::vector<double> buf(n, 0.0);
  std::vector<std::complex<double>> fa(plan.num_bins()), fb(plan.num_bins());
  std::copy(a.begin(), a.end(), buf.begin());
  plan.forward(buf, fa);
  std::fill(buf.begin(), buf.end(), 0.0);
  std::copy(b.begin(), b.end(), buf.begin());
  plan.forward(buf, fb);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  plan.inverse(fa, buf);
  buf.resize(length);
  return buf;
}

// Full linear convolution; output length len(w) + len(taps) - 1.
inline Waveform convolve(const Waveform& w, std::span<const double> taps) {
  require(!taps.empty(), "taps must be non-empty");
  for (double t : taps) require(std::isfinite(t), "taps must be finite");
  if (w.samples.empty()) return Waveform{{}, w.sample_rate};
  const bool small = std::min(w.size(), taps.size()) <= 64;
  return Waveform{small ? convolve_direct(w.samples, taps) : convolve_fft(w.samples, taps), w.sample_rate};
}

// Applies a real, per-bin gain to a waveform in the STFT domain (phase kept)
// and resynthesizes. The signal is zero-padded by n_fft on both sides before
// analysis, so the returned waveform (same length as `w`) is fully interior.
inline Waveform spectral_gain(const Waveform& w, std::span<const double> gains, const StftConfig& cfg) {
  detail::validate_stft_config(cfg);
  require(gains.size() == cfg.num_bins(), "gain vector length does not match n_fft");
  const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
  Waveform padded{std::vector<double>(w.size() + 2 * n_fft, 0.0), w.sample_rate};
  std::copy(w.samples.begin(), w.samples.end(), padded.samples.begin() + static_cast<std::ptrdiff_t>(n_fft));
  auto spec = stft(padded, cfg);
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    auto row = spec.bins.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= gains[k];
  }
  auto out = istft(spec);
  out.samples.erase(out.samples.begin(), out.samples.begin() + static_cast<std::ptrdiff_t>(n_fft));
  out.samples.resize(w.size());
  return out;
}

}  // namespace speccor
