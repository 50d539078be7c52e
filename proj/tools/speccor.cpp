// speccor: estimate, apply and verify spectrum-correction coefficients.
//
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "speccor/speccor.hpp"

namespace fs = std::filesystem;
using namespace speccor;

namespace {

AmplitudeSpectrogram analyze(const Waveform& w, const StftConfig& cfg) { return amplitude(stft(w, cfg)); }

// Loads a manifest recording and checks it against the expected sample rate.
Waveform load_row(const io::Manifest& m, const io::ManifestRow& row, int sample_rate) {
  auto w = io::read_wav(m.resolve(row));
  require(w.sample_rate == sample_rate, "sample_rate: '" + row.path + "' is " + std::to_string(w.sample_rate) +
                                            " Hz, expected " + std::to_string(sample_rate) + " Hz");
  return w;
}

int probe_sample_rate(const io::Manifest& m) { return io::read_wav(m.resolve(m.rows.front())).sample_rate; }

std::string coeff_filename(const CorrectionCoefficients& c) {
  return c.source_device + "_to_" + c.reference_device + ".coef";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string manifest, reference, out, window = "hann";
  bool aligned = false;
  int n_fft = 2048, hop = 512;
};

void run_estimate(const EstimateArgs& a) {
  const auto m = io::read_manifest(a.manifest);
  const auto devices = m.devices();
  const bool reference_free = a.reference == kNoReference;
  require(reference_free || devices.count(a.reference), "reference-device: '" + a.reference + "' not in manifest");
  require(!(reference_free && a.aligned), "aligned: --aligned requires a reference device, not 'none'");
  const int sr = probe_sample_rate(m);
  const StftConfig cfg{a.n_fft, a.hop, sr, a.window};
  make_window(cfg.window, cfg.n_fft);
  ensure_dir(a.out);

  std::vector<CorrectionCoefficients> results;
  if (a.aligned) {
    // group -> device -> row index, groups in first-appearance order
    std::vector<std::string> group_order;
    std::map<std::string, std::map<std::string, std::size_t>> groups;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      const auto& r = m.rows[i];
      if (r.group.empty()) continue;
      if (!groups.count(r.group)) group_order.push_back(r.group);
      groups[r.group][r.device] = i;
    }
    for (const auto& device : devices) {
      if (device == a.reference) continue;
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& g : group_order) {
        const auto& members = groups[g];
        auto ref = members.find(a.reference), src = members.find(device);
        if (ref != members.end() && src != members.end()) pairs.emplace_back(ref->second, src->second);
      }
      require(!pairs.empty(), "group: device '" + device + "' shares no alignment group with '" + a.reference + "'");
      std::vector<std::optional<AlignedAccumulator>> parts(pairs.size());
      parallel_for(pairs.size(), [&](std::size_t i) {
        const auto ref = analyze(load_row(m, m.rows[pairs[i].first], sr), cfg);
        const auto src = analyze(load_row(m, m.rows[pairs[i].second], sr), cfg);
        require(ref.frames() == src.frames(), "group: recordings in group '" + m.rows[pairs[i].first].group +
                                                  "' differ in length");
        parts[i].emplace();
        parts[i]->add(ref, src);
      });
      AlignedAccumulator total;
      for (const auto& p : parts) total.merge(*p);
      results.push_back(total.result(device, a.reference));
    }
  } else {
    std::vector<std::optional<DeviceSpectrumStats>> per_row(m.rows.size());
    parallel_for(m.rows.size(), [&](std::size_t i) {
      per_row[i] = accumulate_stats(analyze(load_row(m, m.rows[i], sr), cfg), m.rows[i].device);
    });
    std::map<std::string, DeviceSpectrumStats> stats;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      auto [it, inserted] = stats.emplace(m.rows[i].device, *per_row[i]);
      if (!inserted) it->second = merge(it->second, *per_row[i]);
    }
    for (const auto& [device, s] : stats) {
      if (reference_free) results.push_back(simplified_coefficients(s));
      else if (device != a.reference) results.push_back(estimate_unaligned(stats.at(a.reference), s));
    }
  }
  for (const auto& c : results) {
    const auto path = fs::path(a.out) / coeff_filename(c);
    io::write_coefficients(path, c);
    std::cout << "wrote " << path.string() << "\n";
  }
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string coeffs, in, out, encoding = "float32";
  int hop = 0;
};

io::WavEncoding parse_encoding(const std::string& e) {
  if (e == "float32") return io::WavEncoding::float32;
  if (e == "pcm16") return io::WavEncoding::pcm16;
  throw ValidationError("encoding: must be float32 or pcm16");
}

void run_apply(const ApplyArgs& a) {
  const auto enc = parse_encoding(a.encoding);
  const auto c = io::read_coefficients(a.coeffs);
  const auto w = io::read_wav(a.in);
  require(w.sample_rate == c.sample_rate, "sample_rate: input audio does not match coefficients");
  const int hop = a.hop > 0 ? a.hop : c.n_fft / 4;
  io::write_wav(a.out, apply_to_waveform(c, w, hop), enc);
}

struct DesignArgs {
  std::string coeffs, out;
  long taps = 1025;
  double clamp_db = 40.0;
};

void run_design(const DesignArgs& a) {
  require(a.taps > 0 && a.taps % 2 == 1, "taps must be odd");
  require(a.clamp_db > 0.0, "clamp-db: must be positive");
  const auto c = io::read_coefficients(a.coeffs);
  io::write_filter(a.out, design_ls(c, static_cast<std::size_t>(a.taps), {a.clamp_db}));
}

struct FilterArgs {
  std::string filter, in, out, encoding = "float32";
  bool no_delay_compensation = false;
};

void run_filter(const FilterArgs& a) {
  const auto enc = parse_encoding(a.encoding);
  const auto f = io::read_filter(a.filter);
  const auto w = io::read_wav(a.in);
  require(w.sample_rate == f.sample_rate, "sample_rate: input audio does not match filter");
  io::write_wav(a.out, apply_filter(f, w, !a.no_delay_compensation), enc);
}

// ---------------------------------------------------------------------------

void run_simulate(const std::string& config, const std::string& out) {
  const auto cfg = io::read_sim_config(config);
  const fs::path dir(out);
  ensure_dir(dir / "audio");
  ensure_dir(dir / "truth");

  const std::size_t per_slot = cfg.devices.size();
  const std::size_t total = cfg.num_recordings * per_slot;
  std::vector<io::ManifestRow> rows(total);
  parallel_for(total, [&](std::size_t i) {
    const auto r = sim::simulate_recording(cfg, i % per_slot, i / per_slot);
    const std::string rel = "audio/" + r.id + ".wav";
    io::write_wav(dir / rel, r.audio, io::WavEncoding::float32);
    rows[i] = {rel, r.device, r.group};
  });
  io::write_manifest(dir / "manifest.csv", io::Manifest{rows, dir});
  for (const auto& d : cfg.devices)
    io::write_response(dir / "truth" / ("device_" + d.device_id + ".resp"),
                       {"device", d.device_id, cfg.sample_rate, cfg.n_fft, d.gains});
  for (const auto& e : cfg.environments)
    io::write_response(dir / "truth" / ("environment_" + e.scene_id + ".resp"),
                       {"environment", e.scene_id, cfg.sample_rate, cfg.n_fft, e.gains});
  std::cout << "wrote " << total << " recordings to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------

struct FeaturesArgs {
  std::string manifest, coeffs_dir, standardize, out;
  int n_fft = 2048, hop = 512;
  std::size_t n_mels = 256;
  double f_min = 0.0, f_max = 0.0;
};

void run_features(const FeaturesArgs& a) {
  const auto m = io::read_manifest(a.manifest);
  std::optional<Normalization> grouping;
  if (a.standardize == "global") grouping = Normalization::global;
  else if (a.standardize == "per-device") grouping = Normalization::per_device;
  else require(a.standardize.empty(), "standardize: must be 'global' or 'per-device'");

  std::map<std::string, CorrectionCoefficients> coeffs;
  if (!a.coeffs_dir.empty()) {
    for (const auto& p : files_with_extension(a.coeffs_dir, ".coef")) {
      auto c = io::read_coefficients(p);
      require(c.n_fft == a.n_fft, "n-fft: coefficients '" + p.string() + "' were estimated with n_fft " +
                                      std::to_string(c.n_fft));
      const auto device = c.source_device;
      require(coeffs.emplace(device, std::move(c)).second,
              "coeffs-dir: more than one coefficients file for device '" + device + "'");
    }
  }
  const int sr = probe_sample_rate(m);
  const auto fb = mel_filterbank(sr, a.n_fft, a.n_mels, a.f_min, a.f_max > 0 ? std::optional(a.f_max) : std::nullopt);
  const StftConfig cfg{a.n_fft, a.hop, sr, "hann"};

  std::vector<FeatureTensor> feats(m.rows.size());
  parallel_for(m.rows.size(), [&](std::size_t i) {
    const auto spec = analyze(load_row(m, m.rows[i], sr), cfg);
    auto c = coeffs.find(m.rows[i].device);
    feats[i] = c == coeffs.end() ? extract(spec, fb) : extract(spec, fb, c->second);
  });
  std::vector<FeatureStats> stats;
  if (grouping) {
    std::vector<std::string> labels;
    for (const auto& r : m.rows) labels.push_back(r.device);
    auto res = standardize(feats, *grouping, labels);
    feats = std::move(res.features);
    stats = std::move(res.stats);
  }
  ensure_dir(a.out);
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    auto name = fs::path(m.rows[i].path).replace_extension("").string();
    std::replace(name.begin(), name.end(), '/', '_');
    io::write_features(fs::path(a.out) / (name + ".feat"), feats[i]);
  }
  if (!stats.empty()) {
    std::string s = "speccor-feature-stats 1\n";
    for (const auto& st : stats) {
      s += "group " + st.id + " frames " + std::to_string(st.frames) + "\n";
      for (std::size_t k = 0; k < st.mean.size(); ++k) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", st.mean[k], st.stddev[k]);
        s += buf;
      }
    }
    io::detail::write_file(fs::path(a.out) / "stats.txt", s);
  }
  std::cout << "wrote " << feats.size() << " feature files to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

double max_error_db(std::span<const double> est, std::span<const double> truth, std::pair<std::size_t, std::size_t> band) {
  double worst = 0.0;
  for (std::size_t k = band.first; k <= band.second; ++k)
    worst = std::max(worst, std::abs(20.0 * std::log10(est[k] / truth[k])));
  return worst;
}

// Returns true iff every coefficients file is within tolerance.
bool run_verify(const std::string& sim_dir, const std::string& coeffs_dir, double tolerance_db) {
  require(tolerance_db > 0.0, "tolerance-db: must be positive");
  std::map<std::string, io::ResponseFile> truth;
  for (const auto& p : files_with_extension(fs::path(sim_dir) / "truth", ".resp")) {
    auto r = io::read_response(p);
    if (r.kind == "device") truth.emplace(r.id, std::move(r));
  }
  const auto files = files_with_extension(coeffs_dir, ".coef");
  require(!files.empty(), "coeffs-dir: no .coef files in " + coeffs_dir);

  bool ok = true;
  std::map<std::string, CorrectionCoefficients> simplified;
  auto lookup = [&](const std::string& id) -> const io::ResponseFile& {
    auto it = truth.find(id);
    require(it != truth.end(), "device: no ground truth for '" + id + "'");
    return it->second;
  };
  auto report = [&](const std::string& label, double err) {
    const bool pass = err <= tolerance_db;
    ok = ok && pass;
    std::printf("%-40s max mid-band error %.4f dB  %s\n", label.c_str(), err, pass ? "PASS" : "FAIL");
  };
  for (const auto& p : files) {
    const auto c = io::read_coefficients(p);
    const auto band = mid_band_bins(c.n_fft, c.sample_rate);
    if (c.estimator == Estimator::simplified) {
      simplified.emplace(c.source_device, c);
      continue;
    }
    const auto& ref = lookup(c.reference_device);
    const auto& src = lookup(c.source_device);
    require(ref.gains.size() == c.gains.size() && ref.n_fft == c.n_fft, "n_fft: coefficients do not match ground truth");
    std::vector<double> expected(c.gains.size());
    for (std::size_t k = 0; k < expected.size(); ++k) expected[k] = ref.gains[k] / src.gains[k];
    report(p.filename().string(), max_error_db(c.gains, expected, band));
  }
  // Reference-free coefficients are defined up to a device-independent
  // factor; compare every pair's ratio C_d / C_r with R_r / R_d.
  for (auto d = simplified.begin(); d != simplified.end(); ++d) {
    for (auto r = std::next(d); r != simplified.end(); ++r) {
      const auto& cd = d->second;
      const auto& cr = r->second;
      const auto& rd = lookup(d->first);
      const auto& rr = lookup(r->first);
      const auto band = mid_band_bins(cd.n_fft, cd.sample_rate);
      std::vector<double> est(cd.gains.size()), expected(cd.gains.size());
      for (std::size_t k = 0; k < est.size(); ++k) {
        est[k] = cd.gains[k] / cr.gains[k];
        expected[k] = rr.gains[k] / rd.gains[k];
      }
      report(d->first + " vs " + r->first + " (simplified)", max_error_db(est, expected, band));
    }
  }
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speccor: spectrum correction between recording devices"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "estimate correction coefficients from a manifest");
  estimate->add_option("--manifest", est.manifest, "manifest CSV (path,device,group)")->required();
  estimate->add_option("--reference-device", est.reference, "reference device id, or 'none'")->required();
  estimate->add_flag("--aligned", est.aligned, "use alignment groups (aligned estimator)");
  estimate->add_option("--n-fft", est.n_fft, "STFT size")->capture_default_str();
  estimate->add_option("--hop", est.hop, "STFT hop")->capture_default_str();
  estimate->add_option("--window", est.window, "STFT window")->capture_default_str();
  estimate->add_option("--out", est.out, "output directory")->required();

  ApplyArgs ap;
  auto* apply = app.add_subcommand("apply", "STFT-domain correction and resynthesis");
  apply->add_option("--coeffs", ap.coeffs)->required();
  apply->add_option("--in", ap.in)->required();
  apply->add_option("--out", ap.out)->required();
  apply->add_option("--hop", ap.hop, "STFT hop (default n_fft/4)");
  apply->add_option("--encoding", ap.encoding, "float32 or pcm16")->capture_default_str();

  DesignArgs de;
  auto* design = app.add_subcommand("design-fir", "least-squares linear-phase FIR from coefficients");
  design->add_option("--coeffs", de.coeffs)->required();
  design->add_option("--taps", de.taps, "odd number of taps")->capture_default_str();
  design->add_option("--clamp-db", de.clamp_db, "target gain clamp in dB")->capture_default_str();
  design->add_option("--out", de.out)->required();

  FilterArgs fi;
  auto* filter = app.add_subcommand("filter", "time-domain correction with a designed FIR");
  filter->add_option("--filter", fi.filter)->required();
  filter->add_option("--in", fi.in)->required();
  filter->add_option("--out", fi.out)->required();
  filter->add_flag("--no-delay-compensation", fi.no_delay_compensation);
  filter->add_option("--encoding", fi.encoding, "float32 or pcm16")->capture_default_str();

  std::string sim_config, sim_out;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic multi-device dataset");
  simulate->add_option("--config", sim_config, "JSON simulator config")->required();
  simulate->add_option("--out", sim_out)->required();

  FeaturesArgs fe;
  auto* features = app.add_subcommand("features", "log-mel features with optional correction");
  features->add_option("--manifest", fe.manifest)->required();
  features->add_option("--coeffs-dir", fe.coeffs_dir);
  features->add_option("--standardize", fe.standardize, "global or per-device");
  features->add_option("--n-fft", fe.n_fft)->capture_default_str();
  features->add_option("--hop", fe.hop)->capture_default_str();
  features->add_option("--n-mels", fe.n_mels)->capture_default_str();
  features->add_option("--f-min", fe.f_min)->capture_default_str();
  features->add_option("--f-max", fe.f_max, "default sample_rate/2");
  features->add_option("--out", fe.out)->required();

  std::string sim_dir, coeffs_dir;
  double tolerance_db = 1.0;
  auto* verify = app.add_subcommand("verify", "score coefficients against simulator ground truth");
  verify->add_option("--sim-dir", sim_dir)->required();
  verify->add_option("--coeffs-dir", coeffs_dir)->required();
  verify->add_option("--tolerance-db", tolerance_db)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*estimate) run_estimate(est);
    else if (*apply) run_apply(ap);
    else if (*design) run_design(de);
    else if (*filter) run_filter(fi);
    else if (*simulate) run_simulate(sim_config, sim_out);
    else if (*features) run_features(fe);
    else if (*verify) return run_verify(sim_dir, coeffs_dir, tolerance_db) ? 0 : 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
