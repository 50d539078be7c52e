#pragma once

// File formats: WAV (PCM16 / float32, mono or stereo), the recording manifest,
// line-based text files for coefficients, filters and ground-truth responses,
// feature matrices, and the simulator's JSON configuration.

#include "json.hpp"

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "speccor/correction.hpp"
#include "speccor/dsp.hpp"
#include "speccor/features.hpp"
#include "speccor/fir.hpp"
#include "speccor/sim.hpp"

namespace speccor::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Byte helpers

namespace detail {

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const std::uint8_t* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) throw IoError("malformed number for " + what + ": '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) throw IoError("malformed integer for " + what + ": '" + s + "'");
  return v;
}

inline bool is_identifier(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') return false;
  return true;
}

// "key value" header lines followed by an optional numeric block.
class TextReader {
 public:
  TextReader(const std::string& text, std::string origin) : in_(text), origin_(std::move(origin)) {}

  std::string next_line() {
    std::string line;
    if (!std::getline(in_, line)) throw IoError(origin_ + ": unexpected end of file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  std::string value(const std::string& key) {
    const auto line = next_line();
    const auto space = line.find(' ');
    if (space == std::string::npos || line.substr(0, space) != key)
      throw IoError(origin_ + ": expected field '" + key + "', got '" + line + "'");
    return line.substr(space + 1);
  }

  long long integer(const std::string& key) { return parse_int(value(key), key); }

  std::vector<double> numbers(std::size_t count, const std::string& what) {
    std::vector<double> out(count);
    for (auto& v : out) v = parse_double(next_line(), what);
    return out;
  }

  void expect_end() {
    std::string line;
    while (std::getline(in_, line))
      if (!line.empty() && line != "\r") throw IoError(origin_ + ": trailing content '" + line + "'");
  }

 private:
  std::istringstream in_;
  std::string origin_;
};

inline void check_magic(TextReader& r, const std::string& magic, const std::string& origin) {
  const auto line = r.next_line();
  if (line != magic + " 1") throw IoError(origin + ": not a " + magic + " version 1 file");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// WAV

enum class WavEncoding { pcm16, float32 };

inline Waveform read_wav(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string name = path.string();
  if (bytes.size() < 12) throw IoError(name + ": truncated file (no RIFF header)");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(name + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos < bytes.size()) {
    if (pos + 8 > bytes.size()) throw IoError(name + ": truncated chunk header");
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::size_t size = detail::le32(bytes.data() + pos + 4);
    const std::uint8_t* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw IoError(name + ": truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw IoError(name + ": 'fmt ' chunk too small");
      format = detail::le16(body);
      channels = detail::le16(body + 2);
      rate = detail::le32(body + 4);
      bits = detail::le16(body + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw IoError(name + ": 'fmt ' extensible chunk too small");
        format = detail::le16(body + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (id == "data") {
      data = body;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt) throw IoError(name + ": missing 'fmt ' chunk");
  if (data == nullptr) throw IoError(name + ": missing 'data' chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw IoError(name + ": unsupported encoding in 'fmt ' chunk (format " + std::to_string(format) + ", " +
                  std::to_string(bits) + " bits)");
  if (channels != 1 && channels != 2)
    throw IoError(name + ": unsupported channel count in 'fmt ' chunk (" + std::to_string(channels) + ")");
  if (rate == 0) throw IoError(name + ": zero sample rate in 'fmt ' chunk");

  const std::size_t sample_bytes = bits / 8;
  const std::size_t frame_bytes = sample_bytes * channels;
  if (data_size % frame_bytes != 0) throw IoError(name + ": truncated 'data' chunk");
  const std::size_t frames = data_size / frame_bytes;

  Waveform w{std::vector<double>(frames), static_cast<int>(rate)};
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const std::uint8_t* p = data + i * frame_bytes + ch * sample_bytes;
      if (pcm16) {
        acc += static_cast<std::int16_t>(detail::le16(p)) / 32768.0;
      } else {
        const std::uint32_t u = detail::le32(p);
        float f;
        std::memcpy(&f, &u, sizeof f);
        acc += static_cast<double>(f);
      }
    }
    w.samples[i] = channels == 2 ? 0.5 * acc : acc;
  }
  return w;
}

inline std::string encode_wav(const Waveform& w, WavEncoding enc) {
  w.validate();
  const std::uint16_t bits = enc == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.size() * (bits / 8));
  std::string s;
  s.reserve(44 + data_size);
  s += "RIFF";
  detail::put32(s, 36 + data_size);
  s += "WAVEfmt ";
  detail::put32(s, 16);
  detail::put16(s, enc == WavEncoding::pcm16 ? 1 : 3);
  detail::put16(s, 1);
  detail::put32(s, static_cast<std::uint32_t>(w.sample_rate));
  detail::put32(s, static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  detail::put16(s, bits / 8);
  detail::put16(s, bits);
  s += "data";
  detail::put32(s, data_size);
  for (double x : w.samples) {
    if (enc == WavEncoding::pcm16) {
      const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
      detail::put16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      const float f = static_cast<float>(x);
      std::uint32_t u;
      std::memcpy(&u, &f, sizeof u);
      detail::put32(s, u);
    }
  }
  return s;
}

inline void write_wav(const fs::path& path, const Waveform& w, WavEncoding enc = WavEncoding::float32) {
  detail::write_file(path, encode_wav(w, enc));
}

// ---------------------------------------------------------------------------
// Manifest: comma-separated "path,device,group" with a header row.

struct ManifestRow {
  std::string path;
  std::string device;
  std::string group;  // empty when not part of an alignment group
};

struct Manifest {
  std::vector<ManifestRow> rows;
  fs::path base_dir;  // relative paths resolve against this

  fs::path resolve(const ManifestRow& r) const {
    const fs::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::set<std::string> devices() const {
    std::set<std::string> out;
    for (const auto& r : rows) out.insert(r.device);
    return out;
  }

  void validate() const {
    require(!rows.empty(), "manifest: no rows");
    std::set<std::string> paths;
    std::map<std::string, std::set<std::string>> group_devices;
    std::map<std::string, std::size_t> group_sizes;
    for (const auto& r : rows) {
      require(!r.path.empty(), "manifest: empty path");
      require(detail::is_identifier(r.device), "manifest: invalid device for '" + r.path + "'");
      require(paths.insert(r.path).second, "manifest: duplicate path '" + r.path + "'");
      if (!r.group.empty()) {
        require(group_devices[r.group].insert(r.device).second,
                "manifest: group '" + r.group + "' has two rows of device '" + r.device + "'");
        ++group_sizes[r.group];
      }
    }
    for (const auto& [g, n] : group_sizes) require(n >= 2, "manifest: group '" + g + "' has a single row");
  }
};

inline std::string encode_manifest(const Manifest& m) {
  std::string s = "path,device,group\n";
  for (const auto& r : m.rows) s += r.path + "," + r.device + "," + r.group + "\n";
  return s;
}

inline void write_manifest(const fs::path& path, const Manifest& m) { detail::write_file(path, encode_manifest(m)); }

inline Manifest read_manifest(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,device,group") throw IoError(path.string() + ": manifest header must be 'path,device,group'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (line.back() == ',') cols.emplace_back();
    if (cols.size() < 2 || cols.size() > 3)
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 2 or 3 columns");
    m.rows.push_back({cols[0], cols[1], cols.size() == 3 ? cols[2] : ""});
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Coefficients

inline std::string encode_coefficients(const CorrectionCoefficients& c) {
  c.validate();
  require(detail::is_identifier(c.source_device) && detail::is_identifier(c.reference_device),
          "coefficients: device ids must be non-empty and contain no whitespace");
  std::string s = "speccor-coefficients 1\n";
  s += "estimator " + to_string(c.estimator) + "\n";
  s += "source_device " + c.source_device + "\n";
  s += "reference_device " + c.reference_device + "\n";
  s += "sample_rate " + std::to_string(c.sample_rate) + "\n";
  s += "n_fft " + std::to_string(c.n_fft) + "\n";
  s += "num_recordings " + std::to_string(c.num_recordings) + "\n";
  s += "gains " + std::to_string(c.gains.size()) + "\n";
  for (double g : c.gains) s += detail::format_double(g) + "\n";
  return s;
}

inline CorrectionCoefficients decode_coefficients(const std::string& text, const std::string& origin = "coefficients") {
  detail::TextReader r(text, origin);
  detail::check_magic(r, "speccor-coefficients", origin);
  CorrectionCoefficients c;
  try {
    c.estimator = estimator_from_string(r.value("estimator"));
  } catch (const ValidationError& e) {
    throw IoError(origin + ": " + e.what());
  }
  c.source_device = r.value("source_device");
  c.reference_device = r.value("reference_device");
  c.sample_rate = static_cast<int>(r.integer("sample_rate"));
  c.n_fft = static_cast<int>(r.integer("n_fft"));
  c.num_recordings = static_cast<std::size_t>(r.integer("num_recordings"));
  const auto count = r.integer("gains");
  if (count < 0) throw IoError(origin + ": negative gain count");
  c.gains = r.numbers(static_cast<std::size_t>(count), "gain");
  r.expect_end();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw IoError(origin + ": " + e.what());
  }
  return c;
}

inline void write_coefficients(const fs::path& path, const CorrectionCoefficients& c) {
  detail::write_file(path, encode_coefficients(c));
}

inline CorrectionCoefficients read_coefficients(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_coefficients(std::string(bytes.begin(), bytes.end()), path.string());
}

// ---------------------------------------------------------------------------
// Filters

inline std::string encode_filter(const FirFilter& f) {
  f.validate();
  std::string s = "speccor-filter 1\n";
  s += "sample_rate " + std::to_string(f.sample_rate) + "\n";
  s += "target_bins " + std::to_string(f.target_bins) + "\n";
  s += "group_delay " + std::to_string(f.group_delay()) + "\n";
  s += "num_taps " + std::to_string(f.num_taps()) + "\n";
  for (double t : f.taps) s += detail::format_double(t) + "\n";
  return s;
}

inline FirFilter decode_filter(const std::string& text, const std::string& origin = "filter") {
  detail::TextReader r(text, origin);
  detail::check_magic(r, "speccor-filter", origin);
  FirFilter f;
  f.sample_rate = static_cast<int>(r.integer("sample_rate"));
  f.target_bins = static_cast<std::size_t>(r.integer("target_bins"));
  const auto delay = r.integer("group_delay");
  const auto count = r.integer("num_taps");
  if (count < 1 || count % 2 == 0) throw IoError(origin + ": taps must be odd");
  if (delay != (count - 1) / 2) throw IoError(origin + ": group_delay must equal (num_taps - 1) / 2");
  f.taps = r.numbers(static_cast<std::size_t>(count), "tap");
  r.expect_end();
  try {
    f.validate();
  } catch (const ValidationError& e) {
    throw IoError(origin + ": " + e.what());
  }
  return f;
}

inline void write_filter(const fs::path& path, const FirFilter& f) { detail::write_file(path, encode_filter(f)); }

inline FirFilter read_filter(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_filter(std::string(bytes.begin(), bytes.end()), path.string());
}

// ---------------------------------------------------------------------------
// Ground-truth responses written by the simulator

struct ResponseFile {
  std::string kind;  // "device" or "environment"
  std::string id;
  int sample_rate = 0;
  int n_fft = 0;
  std::vector<double> gains;
};

inline std::string encode_response(const ResponseFile& r) {
  require(detail::is_identifier(r.id) && (r.kind == "device" || r.kind == "environment"), "response: invalid id/kind");
  std::string s = "speccor-response 1\n";
  s += "kind " + r.kind + "\n";
  s += "id " + r.id + "\n";
  s += "sample_rate " + std::to_string(r.sample_rate) + "\n";
  s += "n_fft " + std::to_string(r.n_fft) + "\n";
  s += "gains " + std::to_string(r.gains.size()) + "\n";
  for (double g : r.gains) s += detail::format_double(g) + "\n";
  return s;
}

inline ResponseFile read_response(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string origin = path.string();
  detail::TextReader r(std::string(bytes.begin(), bytes.end()), origin);
  detail::check_magic(r, "speccor-response", origin);
  ResponseFile out;
  out.kind = r.value("kind");
  out.id = r.value("id");
  out.sample_rate = static_cast<int>(r.integer("sample_rate"));
  out.n_fft = static_cast<int>(r.integer("n_fft"));
  const auto count = r.integer("gains");
  if (count < 0) throw IoError(origin + ": negative gain count");
  out.gains = r.numbers(static_cast<std::size_t>(count), "gain");
  r.expect_end();
  return out;
}

inline void write_response(const fs::path& path, const ResponseFile& r) { detail::write_file(path, encode_response(r)); }

// ---------------------------------------------------------------------------
// Features: text header terminated by "end", then rows*cols little-endian
// float64 values in row-major order.

inline std::string encode_features(const FeatureTensor& f) {
  std::string s = "speccor-features 1\n";
  s += "rows " + std::to_string(f.values.rows()) + "\n";
  s += "cols " + std::to_string(f.values.cols()) + "\n";
  s += "normalization " + to_string(f.normalization) + "\n";
  s += "stats_id " + (f.stats_id.empty() ? std::string("none") : f.stats_id) + "\n";
  s += std::string("correction ") + (f.corrected_pre_mel ? "pre_mel" : "none") + "\n";
  s += "end\n";
  for (double v : f.values.values()) {
    std::uint64_t u;
    std::memcpy(&u, &v, sizeof u);
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  return s;
}

inline FeatureTensor decode_features(const std::string& bytes, const std::string& origin = "features") {
  const auto end = bytes.find("\nend\n");
  if (end == std::string::npos) throw IoError(origin + ": missing header terminator");
  detail::TextReader r(bytes.substr(0, end + 1), origin);
  detail::check_magic(r, "speccor-features", origin);
  const auto rows = r.integer("rows");
  const auto cols = r.integer("cols");
  const auto norm = r.value("normalization");
  const auto stats = r.value("stats_id");
  const auto corr = r.value("correction");
  if (rows < 0 || cols < 0) throw IoError(origin + ": negative dimensions");
  FeatureTensor f;
  f.values = Matrix<double>(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  if (norm == "raw") f.normalization = Normalization::raw;
  else if (norm == "global") f.normalization = Normalization::global;
  else if (norm == "per_device") f.normalization = Normalization::per_device;
  else throw IoError(origin + ": unknown normalization '" + norm + "'");
  f.stats_id = stats == "none" ? "" : stats;
  f.corrected_pre_mel = corr == "pre_mel";
  const std::size_t offset = end + 5;
  const std::size_t need = f.values.values().size() * 8;
  if (bytes.size() != offset + need) throw IoError(origin + ": payload size does not match dimensions");
  auto dst = f.values.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= std::uint64_t(static_cast<std::uint8_t>(bytes[offset + 8 * i + b])) << (8 * b);
    std::memcpy(&dst[i], &u, sizeof u);
  }
  return f;
}

inline void write_features(const fs::path& path, const FeatureTensor& f) { detail::write_file(path, encode_features(f)); }

inline FeatureTensor read_features(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_features(std::string(bytes.begin(), bytes.end()), path.string());
}

// ---------------------------------------------------------------------------
// Simulator configuration (JSON)
//
// {
//   "seed": 7, "num_recordings": 4, "duration": 10.0, "source": "white",
//   "aligned": true, "sample_rate": 44100, "n_fft": 2048, "hop": 512,
//   "devices": [ {"id": "A", "seed": 1, "max_db": 20},
//                {"id": "B", "gain_db": -6},
//                {"id": "C", "identity": true} ],
//   "environments": [ {"id": "park", "seed": 11, "max_db": 3} ]
// }

namespace detail {

inline sim::DeviceResponse response_from_json(const nlohmann::json& j, int n_fft, int sample_rate) {
  const auto id = j.at("id").get<std::string>();
  require(is_identifier(id), "sim config: invalid id '" + id + "'");
  if (j.value("identity", false)) return sim::constant_response(0.0, n_fft, sample_rate, id);
  if (j.contains("gain_db")) return sim::constant_response(j.at("gain_db").get<double>(), n_fft, sample_rate, id);
  return sim::make_smooth_response(j.at("seed").get<std::uint64_t>(), j.value("max_db", 20.0), n_fft, sample_rate, id);
}

}  // namespace detail

inline sim::SimConfig sim_config_from_json(const nlohmann::json& j) {
  try {
    sim::SimConfig cfg;
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.num_recordings = j.value("num_recordings", std::size_t{4});
    cfg.duration = j.value("duration", 10.0);
    cfg.source = sim::source_from_string(j.value("source", std::string("white")));
    cfg.aligned = j.value("aligned", true);
    cfg.sample_rate = j.value("sample_rate", 44100);
    cfg.n_fft = j.value("n_fft", 2048);
    cfg.hop = j.value("hop", 512);
    for (const auto& d : j.at("devices")) cfg.devices.push_back(detail::response_from_json(d, cfg.n_fft, cfg.sample_rate));
    if (j.contains("environments"))
      for (const auto& e : j.at("environments")) {
        auto r = detail::response_from_json(e, cfg.n_fft, cfg.sample_rate);
        cfg.environments.push_back(sim::as_environment(r, r.device_id));
      }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("sim config: ") + e.what());
  }
}

inline sim::SimConfig read_sim_config(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return sim_config_from_json(j);
}

}  // namespace speccor::io
