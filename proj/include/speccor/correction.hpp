#pragma once

// Spectrum correction: per-bin gain vectors mapping one recording device onto
// another (or onto a device-independent characteristic), estimated as ratios
// of geometric-mean amplitude spectra, plus the log-domain mean-subtraction and
// cepstral forms of the same operation.

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speccor/dsp.hpp"

namespace speccor {

enum class Estimator { aligned, unaligned, simplified };

inline std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::aligned: return "aligned";
    case Estimator::unaligned: return "unaligned";
    case Estimator::simplified: return "simplified";
  }
  return "unknown";
}

inline Estimator estimator_from_string(const std::string& s) {
  if (s == "aligned") return Estimator::aligned;
  if (s == "unaligned") return Estimator::unaligned;
  if (s == "simplified") return Estimator::simplified;
  throw ValidationError("unknown estimator: " + s);
}

inline constexpr const char* kNoReference = "none";

struct CorrectionCoefficients {
  std::vector<double> gains;  // linear amplitude ratio per bin
  int n_fft = 0;
  int sample_rate = 0;
  std::string source_device;
  std::string reference_device = kNoReference;
  std::size_t num_recordings = 0;
  Estimator estimator = Estimator::unaligned;

  std::size_t num_bins() const { return gains.size(); }

  void validate() const {
    require(n_fft >= 2 && n_fft % 2 == 0, "coefficients: n_fft must be even");
    require(sample_rate > 0, "coefficients: sample_rate must be positive");
    require(gains.size() == static_cast<std::size_t>(n_fft) / 2 + 1,
            "coefficients: gains length must equal n_fft/2 + 1");
    for (double g : gains) require(std::isfinite(g) && g > 0.0, "coefficients: gains must be positive and finite");
  }
};

// Per-bin mean of log amplitude over every frame of every recording of one
// device. Mergeable, so accumulation can be sharded.
struct DeviceSpectrumStats {
  std::vector<double> log_mean;
  std::size_t total_frames = 0;
  std::size_t num_recordings = 0;
  std::string device;
  int n_fft = 0;
  int sample_rate = 0;

  void validate() const {
    require(num_recordings >= 1 && total_frames >= num_recordings, "stats: need total_frames >= num_recordings >= 1");
    require(log_mean.size() == static_cast<std::size_t>(n_fft) / 2 + 1, "stats: log_mean length must equal n_fft/2 + 1");
  }
};

struct Recording {
  std::string id;
  std::string device;
  AmplitudeSpectrogram spec;
};

// Recordings with device labels; alignment_groups maps recording id to a group
// id shared by recordings that captured the same signal.
struct RecordingSet {
  std::vector<Recording> items;
  std::map<std::string, std::string> alignment_groups;

  void validate() const {
    require(!items.empty(), "recording set is empty");
    const StftConfig& cfg = items.front().spec.config;
    std::map<std::string, std::size_t> group_frames;
    for (const auto& r : items) {
      require(!r.device.empty(), "recording '" + r.id + "' has no device label");
      require(r.spec.config == cfg, "recording '" + r.id + "' has a different STFT configuration");
      if (auto it = alignment_groups.find(r.id); it != alignment_groups.end()) {
        auto [g, inserted] = group_frames.emplace(it->second, r.spec.frames());
        require(inserted || g->second == r.spec.frames(),
                "alignment group '" + it->second + "' has recordings of different lengths");
      }
    }
  }
};

namespace detail {

inline void require_same_config(const StftConfig& a, const StftConfig& b) {
  require(a.n_fft == b.n_fft && a.sample_rate == b.sample_rate, "mixed n_fft/sample_rate");
}

inline Matrix<double> log_ratio(const Matrix<double>& ref, const Matrix<double>& src, double floor) {
  Matrix<double> out(ref.rows(), ref.cols());
  auto r = ref.values();
  auto s = src.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(std::max(r[i], floor)) - std::log(std::max(s[i], floor));
  return out;
}

// Column sums of an already-logged matrix, pairwise over rows.
inline std::vector<double> column_sums(const Matrix<double>& m) {
  std::vector<double> col(m.rows()), out(m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    for (std::size_t r = 0; r < m.rows(); ++r) col[r] = m(r, c);
    out[c] = pairwise_sum(col);
  }
  return out;
}

}  // namespace detail

inline DeviceSpectrumStats accumulate_stats(std::span<const AmplitudeSpectrogram> specs, const std::string& device,
                                            double floor = kAmplitudeFloor) {
  require(!specs.empty(), "accumulate_stats: no recordings");
  const StftConfig& cfg = specs.front().config;
  std::vector<double> sums(cfg.num_bins(), 0.0);
  std::size_t frames = 0;
  for (const auto& s : specs) {
    detail::require_same_config(cfg, s.config);
    require(s.num_bins() == sums.size(), "accumulate_stats: bin count mismatch");
    const auto part = column_log_sums(s.mags, floor);
    for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += part[k];
    frames += s.frames();
  }
  require(frames > 0, "accumulate_stats: recordings have no frames");
  DeviceSpectrumStats out{std::move(sums), frames, specs.size(), device, cfg.n_fft, cfg.sample_rate};
  for (double& v : out.log_mean) v /= static_cast<double>(frames);
  return out;
}

inline DeviceSpectrumStats accumulate_stats(const AmplitudeSpectrogram& spec, const std::string& device,
                                            double floor = kAmplitudeFloor) {
  return accumulate_stats(std::span<const AmplitudeSpectrogram>(&spec, 1), device, floor);
}

// Frame-weighted average of the two log means.
inline DeviceSpectrumStats merge(const DeviceSpectrumStats& a, const DeviceSpectrumStats& b) {
  require(a.n_fft == b.n_fft && a.sample_rate == b.sample_rate, "merge: mixed n_fft/sample_rate");
  require(a.log_mean.size() == b.log_mean.size(), "merge: bin count mismatch");
  require(a.device == b.device, "merge: stats belong to different devices");
  const double na = static_cast<double>(a.total_frames);
  const double nb = static_cast<double>(b.total_frames);
  DeviceSpectrumStats out = a;
  out.total_frames = a.total_frames + b.total_frames;
  out.num_recordings = a.num_recordings + b.num_recordings;
  for (std::size_t k = 0; k < out.log_mean.size(); ++k)
    out.log_mean[k] = (na * a.log_mean[k] + nb * b.log_mean[k]) / (na + nb);
  return out;
}

// Streaming form of estimate_aligned: geometric mean of reference/source
// amplitude ratios over all frames of all added pairs.
class AlignedAccumulator {
 public:
  explicit AlignedAccumulator(double floor = kAmplitudeFloor) : floor_(floor) {}

  void add(const AmplitudeSpectrogram& ref, const AmplitudeSpectrogram& src) {
    require(ref.frames() == src.frames() && ref.num_bins() == src.num_bins(), "unaligned pair");
    detail::require_same_config(ref.config, src.config);
    if (pairs_ == 0) {
      config_ = ref.config;
      sums_.assign(ref.num_bins(), 0.0);
    }
    detail::require_same_config(config_, ref.config);
    require(ref.num_bins() == sums_.size(), "unaligned pair");
    const auto part = detail::column_sums(detail::log_ratio(ref.mags, src.mags, floor_));
    for (std::size_t k = 0; k < sums_.size(); ++k) sums_[k] += part[k];
    frames_ += ref.frames();
    ++pairs_;
  }

  // Folds in another accumulator's pairs (used to shard across workers).
  void merge(const AlignedAccumulator& other) {
    if (other.pairs_ == 0) return;
    if (pairs_ == 0) {
      *this = other;
      return;
    }
    detail::require_same_config(config_, other.config_);
    require(sums_.size() == other.sums_.size(), "merge: bin count mismatch");
    for (std::size_t k = 0; k < sums_.size(); ++k) sums_[k] += other.sums_[k];
    frames_ += other.frames_;
    pairs_ += other.pairs_;
  }

  std::size_t pairs() const { return pairs_; }

  CorrectionCoefficients result(const std::string& source_device = "source",
                                const std::string& reference_device = "reference") const {
    require(pairs_ > 0 && frames_ > 0, "estimate_aligned: no aligned frames");
    CorrectionCoefficients c;
    c.gains.resize(sums_.size());
    for (std::size_t k = 0; k < sums_.size(); ++k) c.gains[k] = std::exp(sums_[k] / static_cast<double>(frames_));
    c.n_fft = config_.n_fft;
    c.sample_rate = config_.sample_rate;
    c.source_device = source_device;
    c.reference_device = reference_device;
    c.num_recordings = pairs_;
    c.estimator = Estimator::aligned;
    return c;
  }

 private:
  double floor_;
  StftConfig config_;
  std::vector<double> sums_;
  std::size_t frames_ = 0;
  std::size_t pairs_ = 0;
};

// refs[i] and srcs[i] are aligned recordings of the same signal.
inline CorrectionCoefficients estimate_aligned(std::span<const AmplitudeSpectrogram> refs,
                                               std::span<const AmplitudeSpectrogram> srcs,
                                               const std::string& source_device = "source",
                                               const std::string& reference_device = "reference",
                                               double floor = kAmplitudeFloor) {
  require(refs.size() == srcs.size(), "unaligned pair: reference and source lists differ in length");
  AlignedAccumulator acc(floor);
  for (std::size_t i = 0; i < refs.size(); ++i) acc.add(refs[i], srcs[i]);
  return acc.result(source_device, reference_device);
}

inline CorrectionCoefficients estimate_unaligned(const DeviceSpectrumStats& ref_stats,
                                                 const DeviceSpectrumStats& src_stats) {
  require(ref_stats.n_fft == src_stats.n_fft && ref_stats.sample_rate == src_stats.sample_rate,
          "estimate_unaligned: config mismatch");
  require(ref_stats.log_mean.size() == src_stats.log_mean.size(), "estimate_unaligned: bin count mismatch");
  CorrectionCoefficients c;
  c.gains.resize(ref_stats.log_mean.size());
  for (std::size_t k = 0; k < c.gains.size(); ++k) c.gains[k] = std::exp(ref_stats.log_mean[k] - src_stats.log_mean[k]);
  c.n_fft = ref_stats.n_fft;
  c.sample_rate = ref_stats.sample_rate;
  c.source_device = src_stats.device;
  c.reference_device = ref_stats.device;
  c.num_recordings = ref_stats.num_recordings + src_stats.num_recordings;
  c.estimator = Estimator::unaligned;
  return c;
}

// Reference-free coefficients: the inverse geometric-mean spectrum of a device.
inline CorrectionCoefficients simplified_coefficients(const DeviceSpectrumStats& stats) {
  CorrectionCoefficients c;
  c.gains.resize(stats.log_mean.size());
  for (std::size_t k = 0; k < c.gains.size(); ++k) c.gains[k] = std::exp(-stats.log_mean[k]);
  c.n_fft = stats.n_fft;
  c.sample_rate = stats.sample_rate;
  c.source_device = stats.device;
  c.reference_device = kNoReference;
  c.num_recordings = stats.num_recordings;
  c.estimator = Estimator::simplified;
  return c;
}

inline AmplitudeSpectrogram apply_to_amplitudes(const CorrectionCoefficients& c, const AmplitudeSpectrogram& a) {
  require(c.num_bins() == a.num_bins(), "coefficient bin count does not match spectrogram");
  AmplitudeSpectrogram out = a;
  for (std::size_t t = 0; t < out.frames(); ++t) {
    auto row = out.mags.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= c.gains[k];
  }
  return out;
}

// Scales each complex bin by its real gain; phase is untouched.
inline ComplexSpectrogram apply_to_complex(const CorrectionCoefficients& c, const ComplexSpectrogram& spec) {
  require(c.num_bins() == spec.num_bins(), "coefficient bin count does not match spectrogram");
  ComplexSpectrogram out = spec;
  for (std::size_t t = 0; t < out.frames(); ++t) {
    auto row = out.bins.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= c.gains[k];
  }
  return out;
}

// STFT-domain correction of a waveform with resynthesis; output has the input length.
inline Waveform apply_to_waveform(const CorrectionCoefficients& c, const Waveform& w, int hop,
                                  const std::string& window = "hann") {
  require(w.sample_rate == c.sample_rate, "sample-rate mismatch between coefficients and audio");
  return spectral_gain(w, c.gains, StftConfig{c.n_fft, hop, c.sample_rate, window});
}

// Element-wise product of two gain vectors: chaining d->r with r->r' gives d->r'.
inline CorrectionCoefficients compose(const CorrectionCoefficients& first, const CorrectionCoefficients& second) {
  require(first.num_bins() == second.num_bins() && first.n_fft == second.n_fft &&
              first.sample_rate == second.sample_rate,
          "compose: config mismatch");
  CorrectionCoefficients out = first;
  for (std::size_t k = 0; k < out.gains.size(); ++k) out.gains[k] *= second.gains[k];
  out.reference_device = second.reference_device;
  return out;
}

inline Matrix<double> log_amplitude(const AmplitudeSpectrogram& a, double floor = kAmplitudeFloor) {
  Matrix<double> out(a.frames(), a.num_bins());
  auto src = a.mags.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::log(std::max(src[i], floor));
  return out;
}

// Subtracts the per-bin mean over all frames of all matrices in the group.
inline std::vector<Matrix<double>> subtract_group_mean(std::span<const Matrix<double>> group) {
  require(!group.empty(), "empty device group");
  const std::size_t cols = group.front().cols();
  std::vector<double> sums(cols, 0.0);
  std::size_t frames = 0;
  for (const auto& m : group) {
    require(m.cols() == cols, "bin count mismatch within group");
    const auto part = detail::column_sums(m);
    for (std::size_t k = 0; k < cols; ++k) sums[k] += part[k];
    frames += m.rows();
  }
  require(frames > 0, "device group has no frames");
  std::vector<Matrix<double>> out(group.begin(), group.end());
  for (auto& m : out) {
    for (std::size_t t = 0; t < m.rows(); ++t) {
      auto row = m.row(t);
      for (std::size_t k = 0; k < cols; ++k) row[k] -= sums[k] / static_cast<double>(frames);
    }
  }
  return out;
}

// Per-device, per-bin log-mean subtraction. Results follow set.items order.
inline std::vector<Matrix<double>> log_mean_subtract_per_device(const RecordingSet& set,
                                                                double floor = kAmplitudeFloor) {
  set.validate();
  std::map<std::string, std::vector<std::size_t>> by_device;
  for (std::size_t i = 0; i < set.items.size(); ++i) by_device[set.items[i].device].push_back(i);
  std::vector<Matrix<double>> out(set.items.size());
  for (const auto& [device, indices] : by_device) {
    require(!indices.empty(), "empty device group: " + device);
    std::vector<Matrix<double>> logs;
    logs.reserve(indices.size());
    for (std::size_t i : indices) logs.push_back(log_amplitude(set.items[i].spec, floor));
    auto centred = subtract_group_mean(logs);
    for (std::size_t j = 0; j < indices.size(); ++j) out[indices[j]] = std::move(centred[j]);
  }
  return out;
}

// Classical per-recording form: subtract each bin's own time mean.
inline Matrix<double> cms_per_recording(const Matrix<double>& log_spec) {
  return std::move(subtract_group_mean(std::span<const Matrix<double>>(&log_spec, 1)).front());
}

struct Cepstrum {
  std::vector<double> values;  // quefrency 0 .. F-1 (the even extension is symmetric)
  static constexpr const char* transform = "idft-even-extension";
  double normalization = 0.0;  // values = normalization * DFT(even extension)
};

// Real cepstrum of a one-sided log spectrum of length F: inverse DFT of its
// even extension to length 2(F - 1). Quefrencies F..2F-3 mirror 1..F-2.
inline Cepstrum real_cepstrum(std::span<const double> log_frame) {
  require(log_frame.size() >= 2, "real_cepstrum needs at least 2 bins");
  for (double v : log_frame) require(std::isfinite(v), "real_cepstrum input must be finite");
  fft::Dct1 dct(log_frame.size());
  Cepstrum c;
  c.values.resize(log_frame.size());
  dct.execute(log_frame, c.values);
  c.normalization = 1.0 / (2.0 * static_cast<double>(log_frame.size() - 1));
  for (double& v : c.values) v *= c.normalization;
  return c;
}

// Frame-wise real cepstra of a log spectrogram.
inline Matrix<double> cepstrogram(const Matrix<double>& log_spec) {
  Matrix<double> out(log_spec.rows(), log_spec.cols());
  if (log_spec.rows() == 0) return out;
  require(log_spec.cols() >= 2, "cepstrogram needs at least 2 bins");
  fft::Dct1 dct(log_spec.cols());
  const double norm = 1.0 / (2.0 * static_cast<double>(log_spec.cols() - 1));
  for (std::size_t t = 0; t < log_spec.rows(); ++t) {
    dct.execute(log_spec.row(t), out.row(t));
    for (double& v : out.row(t)) v *= norm;
  }
  return out;
}

// Cepstral mean subtraction with the mean taken over every frame of every
// recording in the group (one device), in the quefrency domain.
inline std::vector<Matrix<double>> cms_dataset(std::span<const Matrix<double>> log_specs) {
  std::vector<Matrix<double>> cepstra;
  cepstra.reserve(log_specs.size());
  for (const auto& m : log_specs) cepstra.push_back(cepstrogram(m));
  return subtract_group_mean(cepstra);
}

}  // namespace speccor
