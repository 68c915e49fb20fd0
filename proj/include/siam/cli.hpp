#pragma once

// Command layer behind the siam executable. Every command is driven by one JSON run
// configuration (flags are folded into it first), writes <root>/<stage>/<artifact> files
// and a manifest with content hashes. Nothing time- or host-dependent is written, so reruns
// with the same inputs are byte-identical.

#include "siam/analysis.hpp"
#include "siam/geometry_io.hpp"
#include "siam/json_util.hpp"
#include "siam/map_io.hpp"
#include "siam/packet.hpp"
#include "siam/pcm_io.hpp"
#include "siam/scene_io.hpp"
#include "siam/spectral_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace siam::cli {

inline constexpr const char* kToolVersion = "1.0.0";

enum class Format { csv, json, bin };

inline Format format_from_string(const std::string& s, const std::string& field) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  if (s == "bin") return Format::bin;
  throw SchemaError(field, "expected csv, json or bin");
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SchemaError(path.string(), "cannot open");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------------------------
// Run configuration

struct GeometryConfig {
  int panels_x = 3, panels_z = 3;
  std::uint64_t seed = 1;
  std::string file;  // load instead of generating when set
};

struct SubarrayConfig {
  std::string strategy = "dnw_like";  // dnw_like | pitch_series | freq_dependent | explicit | full
  Vec2 center{2.4, -0.5};
  double aperture = 2.0;
  int mics = 140;
  double epsilon = 0.1;
  int count = 13;
  int index = -1;  // pitch_series: one member instead of all
  double d_ref = 5.5;
  double f_ref = 1000.0;
  std::vector<std::size_t> indices;
};

struct AcquisitionConfig {
  std::string mode = "exact";  // exact | timeseries | pdm
  double duration = 1.0;
  double rate = kPcmRate;
  double full_scale = 20.0;  // Pa at 0 dBFS
  double drop_rate = 0.0;
  std::vector<std::size_t> drop_packets;
  bool reorder = false;
};

struct BeamformConfig {
  GridSpec grid;
  std::optional<RegionOfInterest> roi;
  std::vector<double> frequencies;
  std::optional<std::pair<double, double>> f_range;
  BandType bands = BandType::narrowband;
  bool diagonal_removal = true;
  bool clean_sc = true;
  CleanScParams clean;
  SteeringCorrections corrections;
  AngleAveraging averaging = AngleAveraging::db;
};

struct OutputConfig {
  Format format = Format::csv;
  std::optional<std::vector<double>> maps;
  double render_sigma = 0.0;
};

struct RunConfig {
  std::string run = "run";
  std::uint64_t seed = 0;
  GeometryConfig geometry;
  std::optional<Scene> scene;
  SubarrayConfig subarray;
  AcquisitionConfig acquisition;
  WelchParams spectral;
  BeamformConfig beamforming;
  std::vector<Vec3> farfield_mics;
  int fpga = 0;
  OutputConfig outputs;
};

inline BandType band_from_string(const std::string& s, const std::string& field) {
  if (s == "narrowband") return BandType::narrowband;
  if (s == "third_octave") return BandType::third_octave;
  if (s == "octave") return BandType::octave;
  throw SchemaError(field, "expected narrowband, third_octave or octave");
}

inline GridSpec grid_from_json(const json::Object& o) {
  o.allow_only({"x_min", "x_max", "z_min", "z_max", "spacing", "y", "delta_deg", "aoa_deg", "pivot"});
  GridSpec g;
  g.x_min = o.get<double>("x_min");
  g.x_max = o.get<double>("x_max");
  g.z_min = o.get<double>("z_min");
  g.z_max = o.get<double>("z_max");
  g.spacing = o.get_or("spacing", g.spacing);
  g.y = o.get_or("y", g.y);
  g.delta_deg = o.get_or("delta_deg", g.delta_deg);
  g.aoa_deg = o.get_or("aoa_deg", g.aoa_deg);
  g.pivot = o.get_or("pivot", Vec3(Vec3::Zero()));
  if (!(g.spacing > 0)) throw SchemaError(o.path("spacing"), "must be > 0");
  if (!(g.x_max >= g.x_min) || !(g.z_max >= g.z_min)) throw SchemaError(o.path("x_max"), "grid bounds are reversed");
  return g;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  const json::Object o(j, "");
  o.allow_only({"run", "seed", "geometry", "scene", "subarray", "acquisition", "spectral", "beamforming", "farfield",
                "fpga", "outputs"});
  RunConfig c;
  c.run = o.get_or<std::string>("run", c.run);
  if (c.run.empty() || c.run.find_first_of("/\\") != std::string::npos || c.run == "." || c.run == "..")
    throw SchemaError("run", "must be a plain directory name");
  c.seed = o.get_or<std::uint64_t>("seed", 0);
  c.fpga = o.get_or("fpga", 0);

  if (o.has("geometry")) {
    const auto g = o.child("geometry");
    g.allow_only({"panels", "seed", "file"});
    if (g.has("panels")) {
      const auto p = g.get<std::vector<std::size_t>>("panels");
      if (p.size() != 2 || p[0] == 0 || p[1] == 0) throw SchemaError(g.path("panels"), "expected [nx, nz] >= 1");
      c.geometry.panels_x = static_cast<int>(p[0]);
      c.geometry.panels_z = static_cast<int>(p[1]);
    }
    c.geometry.seed = g.get_or<std::uint64_t>("seed", c.geometry.seed);
    c.geometry.file = g.get_or<std::string>("file", "");
  }

  if (o.has("scene")) {
    c.scene = scene_from_json(o.raw("scene"), "scene");
    c.scene->seed = c.seed;
  }

  if (o.has("subarray")) {
    const auto s = o.child("subarray");
    s.allow_only({"strategy", "center", "aperture", "mics", "epsilon", "count", "index", "d_ref", "f_ref", "indices"});
    auto& a = c.subarray;
    a.strategy = s.get_or("strategy", a.strategy);
    if (a.strategy != "dnw_like" && a.strategy != "pitch_series" && a.strategy != "freq_dependent" &&
        a.strategy != "explicit" && a.strategy != "full")
      throw SchemaError(s.path("strategy"), "expected dnw_like, pitch_series, freq_dependent, explicit or full");
    a.center = s.get_or("center", a.center);
    a.aperture = s.get_or("aperture", a.aperture);
    a.mics = s.get_or("mics", a.mics);
    a.epsilon = s.get_or("epsilon", a.epsilon);
    a.count = s.get_or("count", a.count);
    a.index = s.get_or("index", a.index);
    a.d_ref = s.get_or("d_ref", a.d_ref);
    a.f_ref = s.get_or("f_ref", a.f_ref);
    a.indices = s.get_or("indices", a.indices);
    if (!(a.aperture > 0)) throw SchemaError(s.path("aperture"), "must be > 0");
    if (a.mics < 1) throw SchemaError(s.path("mics"), "must be >= 1");
    if (!(a.epsilon >= 0)) throw SchemaError(s.path("epsilon"), "must be >= 0");
    if (a.count < 2) throw SchemaError(s.path("count"), "must be >= 2");
    if (a.strategy == "explicit" && a.indices.empty()) throw SchemaError(s.path("indices"), "required for explicit");
  }

  if (o.has("acquisition")) {
    const auto a = o.child("acquisition");
    a.allow_only({"mode", "duration", "rate", "full_scale", "drop_rate", "drop_packets", "reorder"});
    auto& q = c.acquisition;
    q.mode = a.get_or("mode", q.mode);
    if (q.mode != "exact" && q.mode != "timeseries" && q.mode != "pdm")
      throw SchemaError(a.path("mode"), "expected exact, timeseries or pdm");
    q.duration = a.get_or("duration", q.duration);
    q.rate = a.get_or("rate", q.rate);
    q.full_scale = a.get_or("full_scale", q.full_scale);
    q.drop_rate = a.get_or("drop_rate", q.drop_rate);
    q.drop_packets = a.get_or("drop_packets", q.drop_packets);
    q.reorder = a.get_or("reorder", q.reorder);
    if (!(q.duration > 0)) throw SchemaError(a.path("duration"), "must be > 0");
    if (!(q.rate > 0)) throw SchemaError(a.path("rate"), "must be > 0");
    if (!(q.full_scale > 0)) throw SchemaError(a.path("full_scale"), "must be > 0");
    if (!(q.drop_rate >= 0 && q.drop_rate < 1)) throw SchemaError(a.path("drop_rate"), "must be in [0, 1)");
    if (q.mode == "pdm" && q.rate != kPcmRate) throw SchemaError(a.path("rate"), "pdm mode runs at 48000 Hz");
  }

  if (o.has("spectral")) {
    const auto s = o.child("spectral");
    s.allow_only({"block", "overlap", "window"});
    c.spectral.block = s.get_or("block", c.spectral.block);
    c.spectral.overlap = s.get_or("overlap", c.spectral.overlap);
    if (s.has("window")) {
      try {
        c.spectral.window = window_from_string(s.get<std::string>("window"));
      } catch (const DomainError& e) {
        throw SchemaError(s.path("window"), e.what());
      }
    }
    if (c.spectral.block < 2) throw SchemaError(s.path("block"), "must be >= 2");
    if (!(c.spectral.overlap >= 0 && c.spectral.overlap < 1)) throw SchemaError(s.path("overlap"), "must be in [0, 1)");
  }

  auto& b = c.beamforming;
  b.grid.x_min = 1.8;
  b.grid.x_max = 3.0;
  b.grid.z_min = -0.6;
  b.grid.z_max = 0.6;
  if (o.has("beamforming")) {
    const auto s = o.child("beamforming");
    s.allow_only({"grid", "roi", "frequencies", "f_range", "bands", "diagonal_removal", "clean_sc", "loop_gain",
                  "max_iterations", "stop_threshold", "convection", "amiet", "averaging"});
    if (s.has("grid")) b.grid = grid_from_json(s.child("grid"));
    if (s.has("roi")) {
      const auto r = s.get<std::vector<double>>("roi");
      if (r.size() != 4) throw SchemaError(s.path("roi"), "expected [x_min, x_max, z_min, z_max]");
      b.roi = RegionOfInterest::box(r[0], r[1], r[2], r[3], "roi");
    }
    b.frequencies = s.get_or("frequencies", b.frequencies);
    if (s.has("f_range")) {
      const auto r = s.get<std::vector<double>>("f_range");
      if (r.size() != 2 || !(r[0] > 0) || !(r[1] > r[0])) throw SchemaError(s.path("f_range"), "expected [lo, hi], 0 < lo < hi");
      b.f_range = std::make_pair(r[0], r[1]);
    }
    if (s.has("bands")) b.bands = band_from_string(s.get<std::string>("bands"), s.path("bands"));
    b.diagonal_removal = s.get_or("diagonal_removal", b.diagonal_removal);
    b.clean_sc = s.get_or("clean_sc", b.clean_sc);
    b.clean.loop_gain = s.get_or("loop_gain", b.clean.loop_gain);
    b.clean.max_iterations = s.get_or("max_iterations", b.clean.max_iterations);
    b.clean.stop_threshold = s.get_or("stop_threshold", b.clean.stop_threshold);
    b.corrections.convection = s.get_or("convection", b.corrections.convection);
    b.corrections.amiet = s.get_or("amiet", b.corrections.amiet);
    if (s.has("averaging")) {
      const auto a = s.get<std::string>("averaging");
      if (a != "db" && a != "linear") throw SchemaError(s.path("averaging"), "expected db or linear");
      b.averaging = a == "db" ? AngleAveraging::db : AngleAveraging::linear;
    }
    if (!(b.clean.loop_gain > 0 && b.clean.loop_gain <= 1)) throw SchemaError(s.path("loop_gain"), "must be in (0, 1]");
    for (std::size_t i = 0; i < b.frequencies.size(); ++i)
      if (!(b.frequencies[i] > 0)) throw SchemaError(json::join(s.path("frequencies"), i), "must be > 0");
  }
  b.clean.diagonal_removal = b.diagonal_removal;

  if (o.has("farfield")) {
    const auto f = o.child("farfield");
    f.allow_only({"mics"});
    const auto& mics = f.raw("mics");
    if (!mics.is_array() || mics.empty()) throw SchemaError(f.path("mics"), "expected a non-empty array of [x, y, z]");
    for (std::size_t i = 0; i < mics.size(); ++i)
      c.farfield_mics.push_back(json::Object::convert<Vec3>(mics[i], json::join(f.path("mics"), i)));
  }

  if (o.has("outputs")) {
    const auto s = o.child("outputs");
    s.allow_only({"format", "maps", "render_sigma"});
    if (s.has("format")) c.outputs.format = format_from_string(s.get<std::string>("format"), s.path("format"));
    if (s.has("maps")) c.outputs.maps = s.get<std::vector<double>>("maps");
    c.outputs.render_sigma = s.get_or("render_sigma", 0.0);
  }
  return c;
}

// ---------------------------------------------------------------------------------------------
// Output bookkeeping

class Run {
 public:
  Run(std::filesystem::path root, std::string command, nlohmann::json config)
      : root_(std::move(root)), command_(std::move(command)), config_(std::move(config)) {}

  const std::filesystem::path& root() const { return root_; }

  /// Removes the artifacts listed by a previous manifest in the same directory.
  void clear_previous() {
    const auto manifest = root_ / "manifest.json";
    if (!std::filesystem::exists(manifest)) return;
    nlohmann::json old;
    try {
      old = nlohmann::json::parse(read_file(manifest));
    } catch (const nlohmann::json::exception&) {
      return;
    }
    if (old.contains("outputs") && old["outputs"].is_array())
      for (const auto& o : old["outputs"])
        if (o.contains("path") && o["path"].is_string()) {
          const std::filesystem::path rel = o["path"].get<std::string>();
          if (rel.is_relative() && rel.lexically_normal().string().rfind("..", 0) != 0)
            std::filesystem::remove(root_ / rel);
        }
    std::filesystem::remove(manifest);
  }

  void input(const std::filesystem::path& path) {
    const auto data = read_file(path);
    inputs_.push_back({{"path", path.string()}, {"bytes", data.size()}, {"fnv1a", hex64(fnv1a(data))}});
  }

  void put(const std::string& relative, const std::string& content) {
    const auto path = root_ / relative;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    outputs_.push_back({{"path", relative}, {"bytes", content.size()}, {"fnv1a", hex64(fnv1a(content))}});
  }

  void note(const std::string& key, nlohmann::json value) { notes_[key] = std::move(value); }

  /// Written last; the manifest is not listed among its own outputs.
  void finish() {
    const nlohmann::json m{{"tool", "siam"},           {"version", kToolVersion}, {"command", command_},
                           {"config", config_},        {"inputs", inputs_},       {"outputs", outputs_},
                           {"notes", notes_},          {"level_reference", kLevelReference}};
    const auto path = root_ / "manifest.json";
    std::filesystem::create_directories(root_);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << m.dump(2) << '\n';
  }

  /// Stage name reported when a numerical failure escapes.
  std::string stage = "setup";

 private:
  std::filesystem::path root_;
  std::string command_;
  nlohmann::json config_;
  nlohmann::json inputs_ = nlohmann::json::array();
  nlohmann::json outputs_ = nlohmann::json::array();
  nlohmann::json notes_ = nlohmann::json::object();
};

inline const char* ext(Format f) { return f == Format::csv ? "csv" : f == Format::json ? "json" : "bin"; }

inline std::string freq_tag(double f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", f);
  return buf;
}

inline std::string encode_spectrum(const Spectrum& s, Format f) {
  if (f == Format::csv) {
    std::ostringstream os;
    write_spectrum_csv(os, s);
    return os.str();
  }
  if (f == Format::json) {
    nlohmann::json levels = nlohmann::json::array();
    for (double v : s.values) levels.push_back(is_masked(v) ? nlohmann::json(nullptr) : nlohmann::json(power_to_db(v)));
    nlohmann::json values = nlohmann::json::array();
    for (double v : s.values) values.push_back(is_masked(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    return nlohmann::json{{"band_type", to_string(s.band_type)}, {"frequencies", s.frequencies}, {"power", values},
                          {"level_db", levels},                  {"level_reference", kLevelReference}}
               .dump(2) + "\n";
  }
  std::string out("SIAMSPC1", 8);
  const auto n = static_cast<std::uint64_t>(s.size());
  out.append(reinterpret_cast<const char*>(&n), 8);
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.append(reinterpret_cast<const char*>(&s.frequencies[i]), 8);
    out.append(reinterpret_cast<const char*>(&s.values[i]), 8);
  }
  return out;
}

inline std::string encode_map(const BeamformingMap& m, const FocusGrid& grid, Format f, double sigma) {
  if (f == Format::csv) {
    std::ostringstream os;
    write_map_csv(os, m, grid, sigma);
    return os.str();
  }
  if (f == Format::json) return map_to_json(m, grid, sigma).dump() + "\n";
  return encode_map_raster(m, grid, sigma);
}

// ---------------------------------------------------------------------------------------------
// Stages

inline GeometryPtr build_geometry(const RunConfig& c, Run& run) {
  run.stage = "geometry";
  if (!c.geometry.file.empty()) {
    run.input(c.geometry.file);
    return std::make_shared<const ArrayGeometry>(load_geometry_json(c.geometry.file));
  }
  return std::make_shared<const ArrayGeometry>(assemble_full_array(c.geometry.panels_x, c.geometry.panels_z, c.geometry.seed));
}

/// Sub-arrays for a run. freq_dependent yields one per frequency (parallel to `freqs`);
/// pitch_series yields the series (or one member); the rest a single sub-array.
inline std::vector<SubArray> build_subarrays(GeometryPtr geo, const RunConfig& c, std::span<const double> freqs) {
  const auto& s = c.subarray;
  if (s.strategy == "dnw_like") return {dnw_like_subarray(geo, s.center, s.aperture, s.mics, s.epsilon)};
  if (s.strategy == "explicit") return {explicit_subarray(geo, s.indices)};
  if (s.strategy == "full") {
    std::vector<std::size_t> all(geo->size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return {explicit_subarray(geo, all)};
  }
  if (s.strategy == "pitch_series") {
    auto series = pitch_subarray_series(geo, s.count, s.aperture, s.mics, s.epsilon);
    if (s.index < 0) return series;
    if (s.index >= s.count) throw SchemaError("subarray.index", "must be < count");
    return {series[static_cast<std::size_t>(s.index)]};
  }
  const auto by_freq = freq_dependent_subarrays(geo, s.center, s.d_ref, s.f_ref, s.mics, freqs, s.epsilon);
  std::vector<SubArray> out;
  for (double f : freqs) out.push_back(by_freq.at(f));
  return out;
}

inline nlohmann::json subarray_summary(const SubArray& sub) {
  const auto st = subarray_stats(sub);
  return {{"sensors", sub.size()},
          {"indices", sub.indices},
          {"nominal_center", vec_to_json(sub.nominal_center)},
          {"mean", vec_to_json(st.mean)},
          {"std", vec_to_json(st.std)},
          {"epsilon", sub.epsilon},
          {"discarded_targets", sub.discarded}};
}

/// Loss and reordering applied to a packet stream; returns what was dropped.
inline std::vector<std::uint32_t> inject_faults(std::vector<DaqPacket>& packets, const AcquisitionConfig& q,
                                                std::uint64_t seed) {
  std::vector<std::uint32_t> dropped;
  std::mt19937_64 rng(detail::mix_seed(seed, 0x5EED0D5u));
  std::bernoulli_distribution lose(q.drop_rate);
  std::vector<DaqPacket> kept;
  for (std::size_t i = 0; i < packets.size(); ++i) {
    const bool listed = std::find(q.drop_packets.begin(), q.drop_packets.end(), packets[i].sequence) != q.drop_packets.end();
    const bool random = q.drop_rate > 0 && lose(rng);
    if (listed || random)
      dropped.push_back(packets[i].sequence);
    else
      kept.push_back(std::move(packets[i]));
  }
  packets = q.reorder ? shuffle_packets(std::move(kept), detail::mix_seed(seed, 0x0DE2u)) : std::move(kept);
  return dropped;
}

struct PdmResult {
  TimeSeries pcm;                      // Pa at 48 kHz, decimator warm-up removed
  std::vector<PcmBlock> blocks;        // raw 32-bit output per channel
  std::vector<DaqPacket> packets;      // as received (after fault injection)
  std::vector<PacketGap> gaps;
  std::vector<std::uint32_t> dropped;
  std::size_t overloads = 0;
};

/// Synthesized pressures through the acquisition chain: modulate, packetize per 200-channel
/// group, inject faults, resequence, decimate.
inline PdmResult acquire_pdm(const TimeSeries& ts, const AcquisitionConfig& q, std::uint64_t seed) {
  PdmResult r;
  const std::size_t channels = ts.channels();
  const std::size_t groups = (channels + kChannelsPerPacket - 1) / kChannelsPerPacket;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<PdmStream> streams(kChannelsPerPacket);
    std::size_t length = 0;
    for (std::size_t k = 0; k < kChannelsPerPacket; ++k) {
      const std::size_t ch = g * kChannelsPerPacket + k;
      if (ch >= channels) continue;
      std::vector<double> x(ts.length());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = ts.samples(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(i));
      streams[k] = pdm_modulate(upsample_to_pdm_rate(x), q.full_scale);
      streams[k].channel_id = static_cast<int>(ch);
      r.overloads += streams[k].overload ? 1 : 0;
      length = streams[k].length;
    }
    for (auto& s : streams)
      if (s.length == 0) {  // unused slot: idle pattern
        s.resize(length);
        for (std::size_t i = 0; i < length; i += 2) s.set(i, true);
      }
    auto packets = packetize(streams, static_cast<std::uint16_t>(g));
    for (auto& p : packets) r.packets.push_back(std::move(p));
  }
  r.dropped = inject_faults(r.packets, q, seed);
  const auto rebuilt = depacketize(r.packets, true);
  r.gaps = rebuilt.gaps;
  const auto& chain = default_decimation_chain();
  const std::size_t skip = chain.warmup() / kDecimationFactor + 1;
  for (const auto& cap : rebuilt.fpgas) {
    for (std::size_t k = 0; k < kChannelsPerPacket; ++k) {
      const std::size_t ch = cap.fpga_id * kChannelsPerPacket + k;
      if (ch >= channels) break;
      r.blocks.push_back(pdm_decimate(cap.channels[k]));
      r.blocks.back().channel_id = static_cast<int>(ch);
    }
  }
  if (r.blocks.size() != channels) throw ProtocolError("acquisition: a whole channel group was lost");
  const std::size_t n = r.blocks.front().samples.size();
  if (n <= skip) throw DomainError("acquisition: record shorter than the decimator warm-up");
  r.pcm.rate = kPcmRate;
  r.pcm.samples.resize(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(n - skip));
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t i = skip; i < n; ++i)
      r.pcm.samples(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(i - skip)) =
          r.blocks[ch].samples[i] / kPcmFullScale * q.full_scale;
  return r;
}

/// Bins of `set` nearest to each requested frequency.
inline CsmSet pick_bins(const CsmSet& set, std::span<const double> freqs) {
  CsmSet out;
  for (double f : freqs) {
    auto best = std::min_element(set.begin(), set.end(), [f](const auto& a, const auto& b) {
      return std::abs(a.frequency - f) < std::abs(b.frequency - f);
    });
    if (best == set.end()) throw DomainError("no spectral bins available");
    out.push_back(*best);
  }
  return out;
}

/// CSM source for sub-arrays according to the acquisition mode. Fault reports from pdm mode
/// are appended to `log`.
inline CsmProvider make_provider(const RunConfig& c, std::shared_ptr<nlohmann::json> log) {
  if (!c.scene) throw SchemaError("scene", "missing required field");
  const Scene scene = *c.scene;
  if (c.acquisition.mode == "exact") return exact_csm_provider(scene);
  const auto q = c.acquisition;
  const auto welch = c.spectral;
  const auto seed = c.seed;
  return [scene, q, welch, seed, log](const SubArray& sub, std::span<const double> freqs) {
    const auto pts = sub.positions();
    TimeSeries ts = synthesize_timeseries(scene, pts, q.rate, q.duration, welch.block);
    if (q.mode == "pdm") {
      auto r = acquire_pdm(ts, q, seed);
      log->push_back({{"sensors", sub.size()},
                      {"packets_received", r.packets.size()},
                      {"dropped_sequences", r.dropped},
                      {"gaps", r.gaps.size()},
                      {"overloaded_channels", r.overloads}});
      ts = std::move(r.pcm);
    }
    return pick_bins(welch_csm(ts, welch), freqs);
  };
}

/// Frequencies to evaluate: the explicit list, or the range (Welch bins, or band centers in
/// exact mode).
inline std::vector<double> resolve_frequencies(const RunConfig& c) {
  const auto& b = c.beamforming;
  std::vector<double> f = b.frequencies;
  if (b.f_range) {
    const auto [lo, hi] = *b.f_range;
    if (c.acquisition.mode == "exact") {
      if (b.bands == BandType::narrowband)
        throw SchemaError("beamforming.bands", "exact mode needs third_octave or octave to expand f_range");
      const auto centers = band_centers(b.bands, lo, hi);
      f.insert(f.end(), centers.begin(), centers.end());
    } else {
      const double df = c.acquisition.rate / static_cast<double>(c.spectral.block);
      for (std::size_t k = 1; k <= c.spectral.block / 2; ++k)
        if (k * df >= lo && k * df <= hi) f.push_back(static_cast<double>(k) * df);
    }
  }
  std::sort(f.begin(), f.end());
  f.erase(std::unique(f.begin(), f.end()), f.end());
  if (f.empty()) throw SchemaError("beamforming.frequencies", "no frequencies selected");
  if (c.acquisition.mode != "exact") {
    const double nyquist = c.acquisition.rate / 2;
    if (f.back() >= nyquist) throw SchemaError("beamforming.frequencies", "must be below the Nyquist frequency");
  }
  return f;
}

inline RegionOfInterest resolve_roi(const BeamformConfig& b) {
  if (b.roi) return *b.roi;
  return RegionOfInterest::box(b.grid.x_min, b.grid.x_max, b.grid.z_min, b.grid.z_max, "grid");
}

struct BeamformOutput {
  FocusGrid grid;
  std::vector<BeamformingMap> maps;
  Spectrum spectrum;  // ROI-integrated, band-integrated if requested
};

/// Maps per frequency and their ROI integral. `subs` holds one sub-array, or one per frequency.
inline BeamformOutput beamform_stage(const RunConfig& c, std::span<const SubArray> subs, std::span<const double> freqs,
                                     const CsmProvider& provider, Run& run, std::size_t jobs) {
  const auto& b = c.beamforming;
  BeamformOutput out;
  out.grid = make_focus_grid(b.grid);
  const auto roi = resolve_roi(b);
  roi_indices(out.grid, roi);
  const MediumModel medium = c.scene ? c.scene->medium : MediumModel{};
  out.maps.resize(freqs.size());
  const bool per_freq = subs.size() == freqs.size() && c.subarray.strategy == "freq_dependent";

  run.stage = "spectral";
  std::vector<CrossSpectralMatrix> csms(freqs.size());
  if (per_freq) {
    parallel_for(freqs.size(), jobs, [&](std::size_t k) { csms[k] = provider(subs[k], freqs.subspan(k, 1))[0]; });
  } else {
    auto set = provider(subs[0], freqs);
    for (std::size_t k = 0; k < freqs.size(); ++k) csms[k] = std::move(set[k]);
  }

  run.stage = "beamforming";
  std::optional<SteeringGeometry> shared;
  if (!per_freq) {
    const auto pts = subs[0].positions();
    shared.emplace(out.grid, pts, position_stats(pts).mean, medium, b.corrections);
  }
  parallel_for(freqs.size(), jobs, [&](std::size_t k) {
    const double f = csms[k].frequency;
    SteeringSet st;
    if (per_freq) {
      const auto pts = subs[k].positions();
      st = steering_formulation_iii(out.grid, pts, position_stats(pts).mean, f, medium, b.corrections);
    } else {
      st = shared->at(f);
    }
    out.maps[k] = b.clean_sc ? clean_sc(csms[k], st, b.clean) : conventional_beamform(csms[k], st, b.diagonal_removal);
    for (double v : out.maps[k].values)
      if (!std::isfinite(v)) throw NumericalError("non-finite map value at " + freq_tag(f) + " Hz");
  });
  out.spectrum = integrate_maps(out.maps, out.grid, roi);
  if (b.bands != BandType::narrowband && c.acquisition.mode != "exact") out.spectrum = band_integrate(out.spectrum, b.bands);
  return out;
}

inline void write_maps(const RunConfig& c, const BeamformOutput& bf, Run& run, const std::string& stage) {
  const auto f = c.outputs.format;
  std::vector<double> wanted;
  if (c.outputs.maps)
    wanted = *c.outputs.maps;
  else if (bf.maps.size() <= 16)
    for (const auto& m : bf.maps) wanted.push_back(m.frequency);
  std::vector<std::size_t> picked;
  for (double w : wanted) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < bf.maps.size(); ++k)
      if (std::abs(bf.maps[k].frequency - w) < std::abs(bf.maps[best].frequency - w)) best = k;
    if (std::find(picked.begin(), picked.end(), best) == picked.end()) picked.push_back(best);
  }
  for (auto k : picked)
    run.put(stage + "/map_" + freq_tag(bf.maps[k].frequency) + "Hz." + ext(f), encode_map(bf.maps[k], bf.grid, f, c.outputs.render_sigma));
  run.put(stage + "/spectrum." + std::string(f == Format::bin ? "bin" : f == Format::json ? "json" : "csv"),
          encode_spectrum(bf.spectrum, f));
}

// ---------------------------------------------------------------------------------------------
// Commands

inline void cmd_geometry(const RunConfig& c, Run& run, bool with_subarray) {
  const auto geo = build_geometry(c, run);
  if (c.outputs.format == Format::bin) throw SchemaError("outputs.format", "geometry is written as csv or json");
  if (c.outputs.format == Format::csv) {
    std::ostringstream os;
    write_geometry_csv(os, *geo);
    run.put("geometry/array.csv", os.str());
  } else {
    run.put("geometry/array.json", geometry_to_json(*geo).dump() + "\n");
  }
  run.note("sensors", geo->size());
  run.note("extent_m", {geo->extent.length(), geo->extent.height()});
  if (with_subarray) {
    run.stage = "subarray";
    const std::vector<double> f = c.beamforming.frequencies;
    const auto subs = build_subarrays(geo, c, f);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : subs) j.push_back(subarray_summary(s));
    run.put("geometry/subarrays.json", j.dump(2) + "\n");
  }
}

inline void cmd_simulate(const RunConfig& c, Run& run, bool write_wav) {
  const auto geo = build_geometry(c, run);
  const auto freqs = resolve_frequencies(c);
  run.stage = "subarray";
  const auto subs = build_subarrays(geo, c, freqs);
  if (subs.size() != 1) throw SchemaError("subarray.strategy", "simulate needs a single sub-array");
  if (!c.scene) throw SchemaError("scene", "missing required field");
  const auto pts = subs[0].positions();
  CsmFileInfo info;
  info.geometry_hash = fnv1a(geometry_to_json(*geo).dump());
  info.channels = subs[0].indices;
  CsmSet set;
  run.stage = "synthesis";
  if (c.acquisition.mode == "exact") {
    set = synthesize_csm(*c.scene, pts, freqs);
  } else {
    TimeSeries ts = synthesize_timeseries(*c.scene, pts, c.acquisition.rate, c.acquisition.duration, c.spectral.block);
    if (c.acquisition.mode == "pdm") ts = acquire_pdm(ts, c.acquisition, c.seed).pcm;
    if (write_wav) {
      std::vector<PcmBlock> blocks(ts.channels());
      for (std::size_t ch = 0; ch < ts.channels(); ++ch) {
        blocks[ch].rate = ts.rate;
        blocks[ch].channel_id = static_cast<int>(ch);
        for (Eigen::Index i = 0; i < ts.samples.cols(); ++i)
          blocks[ch].samples.push_back(to_pcm32(ts.samples(static_cast<Eigen::Index>(ch), i) / c.acquisition.full_scale));
      }
      const auto tmp = run.root() / "simulate" / "timeseries.wav";
      std::filesystem::create_directories(tmp.parent_path());
      write_wav32(tmp.string(), blocks);
      run.put("simulate/timeseries.wav", read_file(tmp));
    }
    run.stage = "spectral";
    set = welch_csm(ts, c.spectral);
    if (!c.beamforming.frequencies.empty() || c.beamforming.f_range) set = pick_bins(set, freqs);
  }
  run.put("simulate/csm.bin", encode_csm_file(set, info));
  Spectrum mean;
  for (const auto& m : set) {
    mean.frequencies.push_back(m.frequency);
    mean.values.push_back(m.values.diagonal().real().mean());
  }
  run.put(std::string("simulate/mean_autospectrum.") + (c.outputs.format == Format::json ? "json" : c.outputs.format == Format::bin ? "bin" : "csv"),
          encode_spectrum(mean, c.outputs.format));
  run.note("channels", pts.size());
  run.note("frequencies", set.size());
}

inline void cmd_acquire(const RunConfig& c, Run& run) {
  const auto geo = build_geometry(c, run);
  if (!c.scene) throw SchemaError("scene", "missing required field");
  const auto channels = fpga_channels(*geo, c.fpga);
  if (channels.empty()) throw SchemaError("fpga", "no sensors on this FPGA");
  std::vector<Vec3> pts;
  for (auto i : channels) pts.push_back(geo->positions[i]);
  run.stage = "synthesis";
  const auto ts = synthesize_timeseries(*c.scene, pts, kPcmRate, c.acquisition.duration, c.spectral.block);
  run.stage = "acquisition";
  const auto r = acquire_pdm(ts, c.acquisition, c.seed);
  const auto tmp_dir = run.root() / "acquire";
  std::filesystem::create_directories(tmp_dir);
  write_capture((tmp_dir / "capture.bin").string(), r.packets);
  run.put("acquire/capture.bin", read_file(tmp_dir / "capture.bin"));
  write_wav32((tmp_dir / "pcm.wav").string(), r.blocks);
  run.put("acquire/pcm.wav", read_file(tmp_dir / "pcm.wav"));
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : r.gaps)
    gaps.push_back({{"fpga", g.fpga_id},
                    {"first_sequence", g.first_sequence},
                    {"last_sequence", g.last_sequence},
                    {"sample_begin", g.sample_begin},
                    {"sample_end", g.sample_end}});
  const nlohmann::json report{{"fpga", c.fpga},
                              {"channels", channels},
                              {"pdm_rate_hz", kPdmRate},
                              {"pcm_rate_hz", kPcmRate},
                              {"pcm_samples", r.blocks.front().samples.size()},
                              {"group_delay_samples", r.blocks.front().group_delay},
                              {"full_scale_pa", c.acquisition.full_scale},
                              {"packets_received", r.packets.size()},
                              {"dropped_sequences", r.dropped},
                              {"gaps", gaps},
                              {"overloaded_channels", r.overloads}};
  run.put("acquire/report.json", report.dump(2) + "\n");
}

/// Beamforms a scene, or a recorded CSM file whose channels index the run geometry.
inline void cmd_beamform(const RunConfig& c, Run& run, std::size_t jobs, const std::string& csm_file) {
  const auto geo = build_geometry(c, run);
  std::vector<double> freqs;
  CsmProvider provider;
  auto log = std::make_shared<nlohmann::json>(nlohmann::json::array());
  if (!csm_file.empty()) {
    run.input(csm_file);
    CsmFileInfo info;
    CsmSet recorded;
    try {
      recorded = decode_csm_file(read_file(csm_file), &info);
    } catch (const std::exception& e) {
      throw SchemaError(csm_file, e.what());
    }
    if (recorded.empty()) throw SchemaError(csm_file, "no frequencies");
    if (info.channels.empty())
      for (Eigen::Index i = 0; i < recorded[0].values.rows(); ++i) info.channels.push_back(static_cast<std::size_t>(i));
    for (const auto& m : recorded) freqs.push_back(m.frequency);
    if (!c.beamforming.frequencies.empty()) freqs = c.beamforming.frequencies;
    const auto channels = info.channels;
    provider = [recorded, channels](const SubArray& sub, std::span<const double> fr) {
      std::vector<std::size_t> local;
      for (auto s : sub.indices) {
        auto it = std::find(channels.begin(), channels.end(), s);
        if (it == channels.end()) throw DomainError("sensor " + std::to_string(s) + " is not in the recorded CSM");
        local.push_back(static_cast<std::size_t>(it - channels.begin()));
      }
      CsmSet out;
      for (const auto& m : pick_bins(recorded, fr)) out.push_back(select_channels(m, local));
      return out;
    };
  } else {
    freqs = resolve_frequencies(c);
    provider = make_provider(c, log);
  }
  run.stage = "subarray";
  auto subs = build_subarrays(geo, c, freqs);
  if (subs.size() != 1 && c.subarray.strategy != "freq_dependent")
    throw SchemaError("subarray.strategy", "beamform needs a single sub-array (set subarray.index for pitch_series)");
  const auto bf = beamform_stage(c, subs, freqs, provider, run, jobs);
  run.stage = "output";
  write_maps(c, bf, run, "beamform");
  nlohmann::json s = nlohmann::json::array();
  for (const auto& sub : subs) s.push_back(subarray_summary(sub));
  run.put("beamform/subarrays.json", s.dump(2) + "\n");
  if (!log->empty()) run.note("acquisition", *log);
}

inline void cmd_directivity(const RunConfig& c, Run& run, std::size_t jobs) {
  const auto geo = build_geometry(c, run);
  const auto freqs = resolve_frequencies(c);
  run.stage = "subarray";
  RunConfig cc = c;
  if (cc.subarray.strategy != "pitch_series") throw SchemaError("subarray.strategy", "directivity uses pitch_series");
  cc.subarray.index = -1;
  const auto subs = build_subarrays(geo, cc, freqs);
  auto log = std::make_shared<nlohmann::json>(nlohmann::json::array());
  DirectivityParams p;
  p.frequencies = freqs;
  p.grid = c.beamforming.grid;
  p.roi = resolve_roi(c.beamforming);
  p.medium = c.scene ? c.scene->medium : MediumModel{};
  p.corrections = c.beamforming.corrections;
  p.clean = c.beamforming.clean;
  p.bands = c.acquisition.mode == "exact" ? BandType::narrowband : c.beamforming.bands;
  p.averaging = c.beamforming.averaging;
  p.jobs = jobs;
  run.stage = "directivity";
  const auto res = directivity_pipeline(subs, make_provider(c, log), p);
  run.stage = "output";
  std::ostringstream surface, polar, levels;
  write_surface_csv(surface, res.surface);
  write_surface_csv(levels, res.surface, false);
  write_surface_csv(polar, octave_polar(res.surface));
  run.put("directivity/gamma_db.csv", surface.str());
  run.put("directivity/level_db.csv", levels.str());
  if (res.surface.band_type == BandType::narrowband) run.put("directivity/polar.csv", polar.str());
  auto meta = surface_metadata(res.surface);
  nlohmann::json prov = nlohmann::json::array();
  for (std::size_t k = 0; k < subs.size(); ++k) {
    auto s = subarray_summary(subs[k]);
    s.erase("indices");
    s["theta_deg"] = res.angles[k].theta;
    s["theta_std_deg"] = res.angles[k].theta_std;
    s["nominal_theta_deg"] = res.nominal[k].theta;
    prov.push_back(s);
  }
  meta["subarrays"] = prov;
  meta["observation_reference"] = vec_to_json(res.observation_reference);
  run.put("directivity/metadata.json", meta.dump(2) + "\n");
  if (!log->empty()) run.note("acquisition", *log);
}

void farfield_stage(const RunConfig& c, const BeamformOutput& bf, Run& run);

inline void cmd_farfield(const RunConfig& c, Run& run, std::size_t jobs) {
  if (c.farfield_mics.empty()) throw SchemaError("farfield.mics", "missing required field");
  if (!c.scene) throw SchemaError("scene", "missing required field");
  const auto geo = build_geometry(c, run);
  const auto freqs = resolve_frequencies(c);
  run.stage = "subarray";
  const auto subs = build_subarrays(geo, c, freqs);
  if (subs.size() != 1 && c.subarray.strategy != "freq_dependent")
    throw SchemaError("subarray.strategy", "farfield needs a single sub-array or freq_dependent");
  auto log = std::make_shared<nlohmann::json>(nlohmann::json::array());
  const auto bf = beamform_stage(c, subs, freqs, make_provider(c, log), run, jobs);
  farfield_stage(c, bf, run);
  if (!log->empty()) run.note("acquisition", *log);
}

/// ROI spectrum against distance-normalized virtual microphones of the same scene.
inline void farfield_stage(const RunConfig& c, const BeamformOutput& bf, Run& run) {
  run.stage = "farfield";
  const Vec3 centre = grid_to_world(c.beamforming.grid, resolve_roi(c.beamforming).centroid());
  Scene quiet = *c.scene;
  quiet.noise.reset();
  std::vector<double> bins;
  for (const auto& m : bf.maps) bins.push_back(m.frequency);
  std::vector<MicSpectrum> mics;
  for (const auto& pos : c.farfield_mics) {
    const std::vector<Vec3> one{pos};
    MicSpectrum m;
    m.distance = (pos - centre).norm();
    for (const auto& csm : synthesize_csm(quiet, one, bins)) {
      m.spectrum.frequencies.push_back(csm.frequency);
      m.spectrum.values.push_back(csm.values(0, 0).real());
    }
    if (bf.spectrum.band_type != BandType::narrowband) m.spectrum = band_integrate(m.spectrum, bf.spectrum.band_type);
    mics.push_back(std::move(m));
  }
  const auto cmp = farfield_compare(bf.spectrum, mics);
  run.stage = "output";
  std::ostringstream os;
  os << std::setprecision(10) << "frequency_hz,integrated_db,mic_mean_db,delta_db\n";
  for (std::size_t k = 0; k < cmp.frequencies.size(); ++k)
    os << cmp.frequencies[k] << ',' << cmp.integrated_db[k] << ',' << cmp.mic_mean_db[k] << ',' << cmp.delta_db[k] << '\n';
  run.put("farfield/comparison.csv", os.str());
  run.put("farfield/comparison.json", nlohmann::json{{"frequencies", cmp.frequencies},
                                                     {"integrated_db", cmp.integrated_db},
                                                     {"mic_mean_db", cmp.mic_mean_db},
                                                     {"delta_db", cmp.delta_db},
                                                     {"resampled", cmp.resampled},
                                                     {"note", cmp.note},
                                                     {"reference_point", vec_to_json(centre)},
                                                     {"level_reference", kLevelReference}}
                                              .dump(2) + "\n");
}

/// Full run from a configuration file: geometry, sub-array, CSMs, maps, ROI spectrum, and a
/// far-field comparison when microphones are configured.
inline void cmd_pipeline(const RunConfig& c, Run& run, std::size_t jobs) {
  const auto geo = build_geometry(c, run);
  run.note("sensors", geo->size());
  const auto freqs = resolve_frequencies(c);
  run.stage = "subarray";
  const auto subs = build_subarrays(geo, c, freqs);
  if (subs.size() != 1 && c.subarray.strategy != "freq_dependent")
    throw SchemaError("subarray.strategy", "pipeline needs a single sub-array; use the directivity command for pitch_series");
  auto log = std::make_shared<nlohmann::json>(nlohmann::json::array());
  const auto bf = beamform_stage(c, subs, freqs, make_provider(c, log), run, jobs);
  run.stage = "output";
  write_maps(c, bf, run, "beamform");
  nlohmann::json s = nlohmann::json::array();
  for (const auto& sub : subs) {
    auto j = subarray_summary(sub);
    j.erase("indices");
    s.push_back(j);
  }
  run.put("beamform/subarrays.json", s.dump(2) + "\n");
  if (!log->empty()) run.note("acquisition", *log);
  if (!c.farfield_mics.empty()) farfield_stage(c, bf, run);
}

}  // namespace siam::cli
