#pragma once

// CSM container (magic, JSON header, packed upper-triangle payload) and spectrum CSV export.

#include "siam/error.hpp"
#include "siam/spectral.hpp"
#include "siam/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace siam {

inline constexpr char kCsmMagic[8] = {'S', 'I', 'A', 'M', 'C', 'S', 'M', '1'};

struct CsmFileInfo {
  std::uint64_t geometry_hash = 0;
  std::vector<std::size_t> channels;  // sensor indices in the parent geometry, optional
};

namespace detail {

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(bits >> (8 * i)));
}

inline double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

/// Layout: magic[8], header length u64 LE, JSON header, then per frequency the upper triangle
/// (row-major, i <= j) as little-endian (re, im) float64 pairs.
inline std::string encode_csm_file(const CsmSet& set, const CsmFileInfo& info = {}) {
  if (set.empty()) throw DomainError("csm file: empty set");
  const std::size_t m = set.front().channels();
  std::string payload;
  payload.reserve(set.size() * m * (m + 1) / 2 * 16);
  nlohmann::json freqs = nlohmann::json::array();
  for (const auto& c : set) {
    if (c.channels() != m) throw DomainError("csm file: inconsistent channel counts");
    freqs.push_back(c.frequency);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i; j < m; ++j) {
        detail::put_f64(payload, c.values(i, j).real());
        detail::put_f64(payload, c.values(i, j).imag());
      }
  }
  const auto& f0 = set.front();
  nlohmann::json h;
  h["format"] = "siam-csm";
  h["version"] = 1;
  h["channels"] = m;
  h["frequencies"] = freqs;
  h["unit"] = "Pa^2/Hz";
  h["n_averages"] = f0.n_averages;
  h["window"] = f0.window;
  h["block_size"] = f0.block_size;
  h["overlap"] = f0.overlap;
  h["geometry_hash"] = info.geometry_hash;
  if (!info.channels.empty()) h["channel_indices"] = info.channels;
  h["payload_hash"] = fnv1a(payload);
  const std::string header = h.dump();

  std::string out(kCsmMagic, 8);
  const auto len = static_cast<std::uint64_t>(header.size());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(len >> (8 * i)));
  out += header;
  out += payload;
  return out;
}

inline CsmSet decode_csm_file(const std::string& data, CsmFileInfo* info = nullptr) {
  if (data.size() < 16 || std::memcmp(data.data(), kCsmMagic, 8) != 0) throw SchemaError("", "not a CSM file");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[8 + i])) << (8 * i);
  if (data.size() < 16 + len) throw SchemaError("header", "truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(data.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("header", e.what());
  }
  const std::size_t m = h.at("channels").get<std::size_t>();
  const auto freqs = h.at("frequencies").get<std::vector<double>>();
  const std::size_t per = m * (m + 1) / 2 * 16;
  const char* p = data.data() + 16 + len;
  if (data.size() != 16 + len + per * freqs.size()) throw SchemaError("payload", "size does not match header");
  if (h.contains("payload_hash") &&
      h["payload_hash"].get<std::uint64_t>() != fnv1a(std::string_view(p, per * freqs.size())))
    throw SchemaError("payload", "hash mismatch");

  CsmSet set(freqs.size());
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    auto& c = set[k];
    c.frequency = freqs[k];
    c.values.resize(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i; j < m; ++j) {
        const Complex v(detail::get_f64(p), detail::get_f64(p + 8));
        p += 16;
        c.values(i, j) = v;
        if (i != j) c.values(j, i) = std::conj(v);
      }
    c.n_averages = h.value("n_averages", std::size_t{0});
    c.window = h.value("window", std::string("exact"));
    c.block_size = h.value("block_size", std::size_t{0});
    c.overlap = h.value("overlap", 0.0);
  }
  if (info) {
    info->geometry_hash = h.value("geometry_hash", std::uint64_t{0});
    info->channels = h.value("channel_indices", std::vector<std::size_t>{});
  }
  return set;
}

inline void save_csm_file(const std::string& path, const CsmSet& set, const CsmFileInfo& info = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  const auto bytes = encode_csm_file(set, info);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline CsmSet load_csm_file(const std::string& path, CsmFileInfo* info = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return decode_csm_file(ss.str(), info);
}

/// CSV with columns frequency, level_db (re 20 uPa, per Hz for narrowband). Masked values are empty.
inline void write_spectrum_csv(std::ostream& os, const Spectrum& s) {
  os << (s.band_type == BandType::narrowband ? "frequency_hz,psd_db\n" : "band_center_hz,band_level_db\n");
  os << std::setprecision(10);
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << s.frequencies[i] << ',';
    if (!is_masked(s.values[i])) os << power_to_db(s.values[i]);
    os << '\n';
  }
}

}  // namespace siam
