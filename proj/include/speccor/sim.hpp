#pragma once

// Synthetic recording model: clean sources pass through an environment
// response and a device response, each a smooth positive per-bin gain applied
// to STFT magnitudes with phase preserved. Ground truth is exact at bin centres.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "speccor/correction.hpp"
#include "speccor/dsp.hpp"

namespace speccor::sim {

struct DeviceResponse {
  std::vector<double> gains;
  std::string device_id;
  int n_fft = 0;
  int sample_rate = 0;
};

struct EnvironmentResponse {
  std::vector<double> gains;
  std::string scene_id;
};

enum class Source { white, pink, speechlike };

inline std::string to_string(Source s) {
  switch (s) {
    case Source::white: return "white";
    case Source::pink: return "pink";
    case Source::speechlike: return "speechlike";
  }
  return "unknown";
}

inline Source source_from_string(const std::string& s) {
  if (s == "white") return Source::white;
  if (s == "pink") return Source::pink;
  if (s == "speechlike" || s == "speechlike-modulated") return Source::speechlike;
  throw ValidationError("unknown source type: " + s);
}

struct SimConfig {
  std::uint64_t seed = 0;
  std::size_t num_recordings = 4;  // per device
  double duration = 10.0;          // seconds
  Source source = Source::white;
  bool aligned = true;
  std::vector<DeviceResponse> devices;
  std::vector<EnvironmentResponse> environments;  // empty: identity environment
  int sample_rate = 44100;
  int n_fft = 2048;
  int hop = 512;

  std::size_t num_samples() const { return static_cast<std::size_t>(std::llround(duration * sample_rate)); }
  StftConfig stft_config() const { return {n_fft, hop, sample_rate, "hann"}; }

  void validate() const {
    require(sample_rate > 0 && n_fft >= 16 && n_fft % 2 == 0 && hop >= 1, "sim: invalid STFT configuration");
    require(duration > 0 && num_samples() >= static_cast<std::size_t>(n_fft), "sim: duration * sample_rate must be >= n_fft");
    require(num_recordings >= 1, "sim: num_recordings must be >= 1");
    require(!devices.empty(), "sim: no devices");
    const std::size_t bins = static_cast<std::size_t>(n_fft) / 2 + 1;
    for (const auto& d : devices) {
      require(d.n_fft == n_fft && d.sample_rate == sample_rate && d.gains.size() == bins,
              "sim: device '" + d.device_id + "' does not match the STFT configuration");
    }
    for (const auto& e : environments)
      require(e.gains.size() == bins, "sim: environment '" + e.scene_id + "' does not match the STFT configuration");
  }
};

struct SimRecording {
  std::string id;
  std::string device;
  std::string environment;
  std::string group;  // alignment group; empty in unaligned mode
  Waveform audio;
};

struct SimDataset {
  std::vector<SimRecording> recordings;
  std::vector<DeviceResponse> devices;
  std::vector<EnvironmentResponse> environments;
  StftConfig config;
};

// splitmix64 finalizer; derives independent sub-seeds from (seed, stream, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

inline DeviceResponse make_smooth_response(std::uint64_t seed, double max_db, int n_fft, int sample_rate,
                                           const std::string& device_id = "device") {
  require(max_db > 0.0 && max_db <= 40.0, "max_db must be in (0, 40]");
  require(n_fft >= 2 && n_fft % 2 == 0 && sample_rate > 0, "invalid n_fft/sample_rate");
  std::mt19937_64 rng(mix_seed(seed, 0x5e5, 0));
  std::uniform_int_distribution<int> num_terms(1, 8), order(1, 4);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);

  const std::size_t bins = static_cast<std::size_t>(n_fft) / 2 + 1;
  std::vector<double> shape(bins, 0.0);
  const int terms = num_terms(rng);
  for (int i = 0; i < terms; ++i) {
    const int k = order(rng);
    const double a = amp(rng);
    const double p = phase(rng);
    for (std::size_t j = 0; j < bins; ++j) {
      const double x = static_cast<double>(j) / static_cast<double>(bins - 1);
      shape[j] += a * std::cos(std::numbers::pi * k * x + p);
    }
  }
  double peak = 0.0;
  for (double v : shape) peak = std::max(peak, std::abs(v));
  require(peak > 0.0, "degenerate response shape");

  DeviceResponse r{std::vector<double>(bins), device_id, n_fft, sample_rate};
  for (std::size_t j = 0; j < bins; ++j) r.gains[j] = std::pow(10.0, (shape[j] / peak) * max_db / 20.0);
  return r;
}

inline DeviceResponse constant_response(double gain_db, int n_fft, int sample_rate, const std::string& device_id) {
  return {std::vector<double>(static_cast<std::size_t>(n_fft) / 2 + 1, std::pow(10.0, gain_db / 20.0)), device_id,
          n_fft, sample_rate};
}

inline EnvironmentResponse as_environment(const DeviceResponse& r, const std::string& scene_id) {
  return {r.gains, scene_id};
}

// Gains mapping `source` onto `reference`: R_ref / R_src per bin.
inline CorrectionCoefficients true_correction(const DeviceResponse& reference, const DeviceResponse& source) {
  require(reference.gains.size() == source.gains.size(), "response length mismatch");
  CorrectionCoefficients c;
  c.gains.resize(reference.gains.size());
  for (std::size_t k = 0; k < c.gains.size(); ++k) c.gains[k] = reference.gains[k] / source.gains[k];
  c.n_fft = reference.n_fft;
  c.sample_rate = reference.sample_rate;
  c.source_device = source.device_id;
  c.reference_device = reference.device_id;
  return c;
}

inline Waveform clean_source(Source kind, std::size_t num_samples, int sample_rate, std::uint64_t seed) {
  constexpr double kRms = 0.1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kRms);
  Waveform w{std::vector<double>(num_samples), sample_rate};
  for (double& s : w.samples) s = normal(rng);

  if (kind == Source::pink && num_samples >= 2) {
    fft::RealFft plan(num_samples);
    std::vector<std::complex<double>> spec(plan.num_bins());
    plan.forward(w.samples, spec);
    spec[0] = 0.0;
    for (std::size_t k = 1; k < spec.size(); ++k) spec[k] /= std::sqrt(static_cast<double>(k));
    plan.inverse(spec, w.samples);
    double energy = 0.0;
    for (double s : w.samples) energy += s * s;
    const double scale = kRms / std::sqrt(energy / static_cast<double>(num_samples));
    for (double& s : w.samples) s *= scale;
  } else if (kind == Source::speechlike) {
    // Syllable-rate amplitude modulation (3-6 Hz) with a random phase.
    std::uniform_real_distribution<double> rate(3.0, 6.0), phase(0.0, 2.0 * std::numbers::pi);
    const double f = rate(rng);
    const double p = phase(rng);
    for (std::size_t i = 0; i < num_samples; ++i) {
      const double s = std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / sample_rate + p);
      w.samples[i] *= 0.05 + 0.95 * s * s;
    }
  }
  return w;
}

// Passes `clean` through the environment and device responses (zero-phase,
// applied to STFT magnitudes). Output has the input length.
inline Waveform record(const Waveform& clean, const EnvironmentResponse& env, const DeviceResponse& dev,
                       int hop = 0) {
  require(clean.sample_rate == dev.sample_rate, "sample-rate mismatch between source and device");
  require(env.gains.size() == dev.gains.size(), "environment and device responses differ in length");
  std::vector<double> gains(dev.gains.size());
  for (std::size_t k = 0; k < gains.size(); ++k) gains[k] = env.gains[k] * dev.gains[k];
  return spectral_gain(clean, gains, StftConfig{dev.n_fft, hop > 0 ? hop : dev.n_fft / 4, dev.sample_rate, "hann"});
}

inline EnvironmentResponse identity_environment(std::size_t bins) {
  return {std::vector<double>(bins, 1.0), "none"};
}

namespace detail {

inline std::string recording_id(const std::string& device, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", index);
  return device + buf;
}

}  // namespace detail

// One recording of `device_index` for recording slot `index`. In aligned mode
// every device records the same clean source per slot; otherwise each device
// draws its own independent sources from the same generator.
inline SimRecording simulate_recording(const SimConfig& cfg, std::size_t device_index, std::size_t index) {
  require(device_index < cfg.devices.size(), "device index out of range");
  const auto& dev = cfg.devices[device_index];
  const std::uint64_t stream = cfg.aligned ? 0 : device_index + 1;
  const auto clean = clean_source(cfg.source, cfg.num_samples(), cfg.sample_rate, mix_seed(cfg.seed, stream, index));
  const auto env = cfg.environments.empty() ? identity_environment(dev.gains.size())
                                            : cfg.environments[index % cfg.environments.size()];
  SimRecording r;
  r.id = detail::recording_id(dev.device_id, index);
  r.device = dev.device_id;
  r.environment = env.scene_id;
  if (cfg.aligned) r.group = detail::recording_id("g", index);
  r.audio = record(clean, env, dev, cfg.hop);
  return r;
}

inline SimDataset generate_dataset(const SimConfig& cfg) {
  cfg.validate();
  SimDataset ds;
  ds.devices = cfg.devices;
  ds.environments = cfg.environments;
  ds.config = cfg.stft_config();
  for (std::size_t i = 0; i < cfg.num_recordings; ++i)
    for (std::size_t d = 0; d < cfg.devices.size(); ++d) ds.recordings.push_back(simulate_recording(cfg, d, i));
  return ds;
}

inline RecordingSet to_recording_set(const SimDataset& ds) {
  RecordingSet set;
  for (const auto& r : ds.recordings) {
    set.items.push_back({r.id, r.device, amplitude(stft(r.audio, ds.config))});
    if (!r.group.empty()) set.alignment_groups[r.id] = r.group;
  }
  return set;
}

}  // namespace speccor::sim
