#pragma once

#include <bit>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sipmsim/correlation.hpp"
#include "sipmsim/extraction.hpp"
#include "sipmsim/spectrum.hpp"
#include "sipmsim/version.hpp"
#include "sipmsim/waveform.hpp"

// Artifact writers: CSV/JSON-lines exports, the binary waveform dump, and
// the run manifest. Every file goes through a checksumming writer so the
// manifest can record content hashes without re-reading anything.

namespace sipmsim {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

inline std::uint64_t fnv1a_64(const void* data, std::size_t n,
                              std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string checksum_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

/// Shortest round-trip decimal form, locale-independent.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// File sink that folds every written byte into an FNV-1a checksum.
class ChecksummedFile {
 public:
  explicit ChecksummedFile(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open output file: " + path);
  }

  void write(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    hash_ = fnv1a_64(data, n, hash_);
  }

  void write_text(std::string_view s) { write(s.data(), s.size()); }

  template <class T>
  void write_le(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
        std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    write(bytes, sizeof(T));
  }

  /// Flushes and returns the checksum of everything written.
  std::string close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed: " + path_);
    return checksum_hex(hash_);
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::uint64_t hash_ = kFnvOffset;
};

/// Spectrum CSV, one row per bin: bin_center,count.
inline std::string write_spectrum_csv(const std::string& path,
                                      const PulseHeightSpectrum& phs) {
  ChecksummedFile f(path);
  f.write_text("bin_center,count\n");
  for (std::size_t i = 0; i < phs.counts.size(); ++i) {
    f.write_text(format_double(phs.bin_center(i)));
    f.write_text(",");
    f.write_text(format_double(phs.counts[i]));
    f.write_text("\n");
  }
  return f.close();
}

inline nlohmann::json spectrum_metadata_json(
    const PulseHeightSpectrum& phs, const std::optional<VisibilityEstimate>& vis) {
  const auto peak_array = [](const std::vector<SpectrumPeak>& ps) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : ps)
      arr.push_back({{"position", p.position}, {"height", p.height}});
    return arr;
  };
  nlohmann::json j{
      {"peaks", peak_array(phs.peaks)},
      {"valleys", peak_array(phs.valleys)},
      {"gamma_series", phs.gamma_series},
      {"gamma_bar", phs.gamma_bar},
  };
  if (vis && vis->value) {
    j["visibility"] = *vis->value;
    j["visibility_err"] = vis->error;
  } else {
    j["visibility"] = nullptr;
    j["visibility_err"] = nullptr;
  }
  return j;
}

inline std::string write_json(const std::string& path, const nlohmann::json& j) {
  ChecksummedFile f(path);
  f.write_text(j.dump(2));
  f.write_text("\n");
  return f.close();
}

/// NRF curve CSV: mean_k,mean_k1,mean_k2,R,sigma_R.
inline std::string write_nrf_csv(const std::string& path, const NRFCurve& curve) {
  ChecksummedFile f(path);
  f.write_text("mean_k,mean_k1,mean_k2,R,sigma_R\n");
  for (const auto& pt : curve.points) {
    f.write_text(format_double(pt.mean_k));
    f.write_text(",");
    f.write_text(format_double(pt.mean_k1));
    f.write_text(",");
    f.write_text(format_double(pt.mean_k2));
    f.write_text(",");
    f.write_text(format_double(pt.R));
    f.write_text(",");
    f.write_text(format_double(pt.sigma_R));
    f.write_text("\n");
  }
  return f.close();
}

inline NRFCurve read_nrf_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open curve file: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("mean_k,", 0) != 0)
    throw std::runtime_error("curve file missing the mean_k header: " + path);
  NRFCurve curve;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(row, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{})
        throw std::runtime_error(path + ": bad number on line " +
                                 std::to_string(lineno));
      vals.push_back(v);
    }
    if (vals.size() != 5)
      throw std::runtime_error(path + ": expected 5 columns on line " +
                               std::to_string(lineno));
    curve.points.push_back({vals[0], vals[3], vals[4], vals[1], vals[2]});
  }
  return curve;
}

/// Per-shot outputs as JSON-lines; k columns appear once calibration ran.
inline std::string write_shot_records_jsonl(const std::string& path,
                                            const std::vector<ShotRecord>& records) {
  ChecksummedFile f(path);
  for (std::size_t i = 0; i < records.size(); ++i) {
    nlohmann::json j{{"shot", i},
                     {"x_out1", records[i].x_out1},
                     {"x_out2", records[i].x_out2}};
    if (records[i].k1) j["k1"] = *records[i].k1;
    if (records[i].k2) j["k2"] = *records[i].k2;
    f.write_text(j.dump());
    f.write_text("\n");
  }
  return f.close();
}

/// One dump record: shot index (u64), sample count (u32), sample period in
/// ns (f64), then the samples as f32. Little-endian throughout.
inline void append_waveform_record(ChecksummedFile& f, std::uint64_t shot,
                                   const WaveformTrace& trace) {
  f.write_le<std::uint64_t>(shot);
  f.write_le<std::uint32_t>(static_cast<std::uint32_t>(trace.samples.size()));
  f.write_le<double>(trace.sample_period);
  for (float s : trace.samples) f.write_le<float>(s);
}

struct DumpedWaveform {
  std::uint64_t shot = 0;
  double sample_period = 0.0;
  std::vector<float> samples;
};

inline std::vector<DumpedWaveform> read_waveform_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dump file: " + path);
  auto read_le = [&in](auto& v) {
    unsigned char bytes[sizeof v];
    in.read(reinterpret_cast<char*>(bytes), sizeof v);
    if (!in) return false;
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(v) / 2; ++i)
        std::swap(bytes[i], bytes[sizeof(v) - 1 - i]);
    }
    std::memcpy(&v, bytes, sizeof v);
    return true;
  };
  std::vector<DumpedWaveform> out;
  for (;;) {
    DumpedWaveform w;
    if (!read_le(w.shot)) break;
    std::uint32_t count = 0;
    if (!read_le(count) || !read_le(w.sample_period))
      throw std::runtime_error("truncated dump record: " + path);
    w.samples.resize(count);
    for (auto& s : w.samples)
      if (!read_le(s)) throw std::runtime_error("truncated dump record: " + path);
    out.push_back(std::move(w));
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Reproducibility sidecar: the exact config, code version, wall-clock
/// stamp, and a checksum for every artifact the run produced.
struct RunManifest {
  nlohmann::json config_echo;
  std::string version = kVersion;
  std::string timestamp;
  std::map<std::string, std::string> checksums;  // file name -> fnv1a-64 hex
};

inline std::string write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j{{"config", m.config_echo},
                   {"version", m.version},
                   {"timestamp", m.timestamp},
                   {"checksums", m.checksums}};
  return write_json(path, j);
}

}  // namespace sipmsim
