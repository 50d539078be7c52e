#pragma once

// Log-mel front end with an optional spectrum-correction stage ahead of the
// mel projection, and per-bin standardization (global or per device).

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "speccor/correction.hpp"
#include "speccor/dsp.hpp"

namespace speccor {

enum class MelNorm { peak, unit_sum };

inline std::string to_string(MelNorm n) { return n == MelNorm::peak ? "peak" : "unit_sum"; }

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelFilterbank {
  Matrix<double> weights;  // n_mels x (n_fft/2 + 1)
  std::vector<std::pair<std::size_t, std::size_t>> support;  // [first, last) non-zero bins per row
  std::vector<double> centers_hz;
  std::size_t n_mels = 0;
  double f_min = 0.0;
  double f_max = 0.0;
  int n_fft = 0;
  int sample_rate = 0;
  static constexpr const char* scale = "htk";
  MelNorm norm = MelNorm::peak;
};

// Triangular filters with HTK mel-spaced centres. A triangle narrower than the
// bin spacing that covers no bin centre gets unit weight at the bin nearest
// its centre, so no row is empty.
inline MelFilterbank mel_filterbank(int sample_rate, int n_fft, std::size_t n_mels, double f_min = 0.0,
                                    std::optional<double> f_max = std::nullopt, MelNorm norm = MelNorm::peak) {
  require(sample_rate > 0 && n_fft >= 2 && n_fft % 2 == 0, "mel_filterbank: invalid sample_rate/n_fft");
  require(n_mels >= 1, "mel_filterbank: n_mels must be >= 1");
  const double top = f_max.value_or(sample_rate / 2.0);
  require(f_min >= 0.0 && f_min < top && top <= sample_rate / 2.0, "mel_filterbank: invalid band [f_min, f_max]");

  const std::size_t bins = static_cast<std::size_t>(n_fft) / 2 + 1;
  MelFilterbank fb{Matrix<double>(n_mels, bins), {}, {}, n_mels, f_min, top, n_fft, sample_rate};
  fb.norm = norm;

  const double mel_lo = hz_to_mel(f_min), mel_hi = hz_to_mel(top);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lower = edges[m], center = edges[m + 1], upper = edges[m + 2];
    fb.centers_hz.push_back(center);
    auto row = fb.weights.row(m);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = bin_frequency(k, n_fft, sample_rate);
      if (f > lower && f <= center) row[k] = (f - lower) / (center - lower);
      else if (f > center && f < upper) row[k] = (upper - f) / (upper - center);
    }
    std::size_t first = bins, last = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      if (row[k] > 0.0) {
        first = std::min(first, k);
        last = k + 1;
      }
    }
    if (first == bins) {
      const auto nearest = static_cast<std::size_t>(std::llround(center * n_fft / sample_rate));
      first = std::min(nearest, bins - 1);
      last = first + 1;
      row[first] = 1.0;
    }
    if (norm == MelNorm::unit_sum) {
      double sum = 0.0;
      for (std::size_t k = first; k < last; ++k) sum += row[k];
      for (std::size_t k = first; k < last; ++k) row[k] /= sum;
    }
    fb.support.emplace_back(first, last);
  }
  return fb;
}

enum class Normalization { raw, global, per_device };

inline std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::raw: return "raw";
    case Normalization::global: return "global";
    case Normalization::per_device: return "per_device";
  }
  return "unknown";
}

struct FeatureTensor {
  Matrix<double> values;  // frames x n_mels
  Normalization normalization = Normalization::raw;
  std::string stats_id;
  bool corrected_pre_mel = false;
};

// Linear mel projection (no log).
inline Matrix<double> project_mel(const AmplitudeSpectrogram& a, const MelFilterbank& fb) {
  require(a.num_bins() == fb.weights.cols(), "mel projection: bin count mismatch");
  require(a.config.n_fft == fb.n_fft && a.config.sample_rate == fb.sample_rate,
          "mel projection: spectrogram and filterbank configs differ");
  Matrix<double> out(a.frames(), fb.n_mels);
  for (std::size_t t = 0; t < a.frames(); ++t) {
    auto src = a.mags.row(t);
    auto dst = out.row(t);
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      const auto [first, last] = fb.support[m];
      double acc = 0.0;
      for (std::size_t k = first; k < last; ++k) acc += fb.weights(m, k) * src[k];
      dst[m] = acc;
    }
  }
  return out;
}

inline FeatureTensor extract(const AmplitudeSpectrogram& a, const MelFilterbank& fb, double floor = kAmplitudeFloor) {
  FeatureTensor out{project_mel(a, fb), Normalization::raw, "", false};
  for (double& v : out.values.values()) v = std::log(std::max(v, floor));
  return out;
}

// Correction is applied to the linear amplitudes before the mel projection.
inline FeatureTensor extract(const AmplitudeSpectrogram& a, const MelFilterbank& fb, const CorrectionCoefficients& c,
                             double floor = kAmplitudeFloor) {
  auto out = extract(apply_to_amplitudes(c, a), fb, floor);
  out.corrected_pre_mel = true;
  return out;
}

struct FeatureStats {
  std::string id;
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at kStddevFloor
  std::size_t frames = 0;
};

inline constexpr double kStddevFloor = 1e-8;

struct StandardizeResult {
  std::vector<FeatureTensor> features;
  std::vector<FeatureStats> stats;
};

inline FeatureStats feature_stats(const std::vector<const Matrix<double>*>& group, const std::string& id) {
  require(!group.empty(), "standardize: empty group");
  const std::size_t cols = group.front()->cols();
  FeatureStats s{id, std::vector<double>(cols, 0.0), std::vector<double>(cols, 0.0), 0};
  for (const auto* m : group) {
    require(m->cols() == cols, "standardize: mel bin count mismatch");
    for (std::size_t t = 0; t < m->rows(); ++t)
      for (std::size_t k = 0; k < cols; ++k) s.mean[k] += (*m)(t, k);
    s.frames += m->rows();
  }
  require(s.frames > 0, "standardize: group has no frames");
  const double n = static_cast<double>(s.frames);
  for (double& v : s.mean) v /= n;
  for (const auto* m : group) {
    for (std::size_t t = 0; t < m->rows(); ++t) {
      for (std::size_t k = 0; k < cols; ++k) {
        const double d = (*m)(t, k) - s.mean[k];
        s.stddev[k] += d * d;
      }
    }
  }
  for (double& v : s.stddev) v = std::max(std::sqrt(v / n), kStddevFloor);
  return s;
}

inline void apply_stats(FeatureTensor& f, const FeatureStats& s, Normalization kind) {
  require(f.values.cols() == s.mean.size(), "standardize: mel bin count mismatch");
  for (std::size_t t = 0; t < f.values.rows(); ++t) {
    auto row = f.values.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = (row[k] - s.mean[k]) / s.stddev[k];
  }
  f.normalization = kind;
  f.stats_id = s.id;
}

// Per mel bin zero mean / unit variance over every frame of the group. In
// per_device mode each device label forms its own group.
inline StandardizeResult standardize(const std::vector<FeatureTensor>& features, Normalization grouping,
                                     const std::vector<std::string>& device_labels = {}) {
  require(grouping != Normalization::raw, "standardize: grouping must be global or per_device");
  StandardizeResult out{features, {}};
  std::map<std::string, std::vector<std::size_t>> groups;
  if (grouping == Normalization::global) {
    for (std::size_t i = 0; i < features.size(); ++i) groups["global"].push_back(i);
  } else {
    require(device_labels.size() == features.size(), "standardize: per_device mode requires one device label per tensor");
    for (std::size_t i = 0; i < features.size(); ++i) {
      require(!device_labels[i].empty(), "standardize: missing device label");
      groups["per_device:" + device_labels[i]].push_back(i);
    }
  }
  for (const auto& [id, indices] : groups) {
    std::vector<const Matrix<double>*> members;
    for (std::size_t i : indices) members.push_back(&features[i].values);
    auto stats = feature_stats(members, id);
    for (std::size_t i : indices) apply_stats(out.features[i], stats, grouping);
    out.stats.push_back(std::move(stats));
  }
  return out;
}

}  // namespace speccor
