#pragma once

// Beamforming map and directivity exports (CSV, JSON, binary raster).

#include "siam/analysis.hpp"
#include "siam/beamforming.hpp"

#include <json.hpp>

#include <cstring>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

namespace siam {

inline constexpr const char* kLevelReference = "dB re (20 uPa)^2, source level at 1 m";

inline nlohmann::json grid_to_json(const FocusGrid& g) {
  const auto& s = g.spec;
  return {{"x_min", s.x_min}, {"x_max", s.x_max}, {"z_min", s.z_min}, {"z_max", s.z_max}, {"spacing", s.spacing},
          {"y", s.y},         {"delta_deg", s.delta_deg}, {"aoa_deg", s.aoa_deg},
          {"pivot", {s.pivot.x(), s.pivot.y(), s.pivot.z()}}, {"nx", g.nx}, {"nz", g.nz}, {"points", g.size()}};
}

/// Values to export: clamped map values, or clean components rendered with a Gaussian of
/// width render_sigma (m; 0 places each component in its cell).
inline std::vector<double> map_export_values(const BeamformingMap& map, const FocusGrid& grid, double render_sigma) {
  return map.kind == MapKind::clean_sc ? render_components(map, grid, render_sigma) : map.clamped();
}

inline void write_map_csv(std::ostream& os, const BeamformingMap& map, const FocusGrid& grid, double render_sigma = 0) {
  const auto v = map_export_values(map, grid, render_sigma);
  os << "# frequency_hz=" << std::setprecision(10) << map.frequency << " kind=" << to_string(map.kind)
     << " diagonal_removal=" << (map.diagonal_removal ? 1 : 0) << " level=" << kLevelReference << '\n';
  os << "index,x_local,z_local,x,y,z,power,level_db\n";
  for (std::size_t t = 0; t < grid.size(); ++t) {
    const auto& p = grid.points[t];
    os << t << ',' << grid.local[t].x() << ',' << grid.local[t].y() << ',' << p.x() << ',' << p.y() << ',' << p.z()
       << ',' << v[t] << ',' << power_to_db(v[t]) << '\n';
  }
}

inline nlohmann::json map_to_json(const BeamformingMap& map, const FocusGrid& grid, double render_sigma = 0) {
  const auto v = map_export_values(map, grid, render_sigma);
  std::vector<double> db(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) db[i] = power_to_db(v[i]);
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : map.components)
    comps.push_back({{"index", c.index}, {"power", c.power}, {"level_db", power_to_db(c.power)}});
  return {{"frequency", map.frequency},
          {"kind", to_string(map.kind)},
          {"diagonal_removal", map.diagonal_removal},
          {"reference", kLevelReference},
          {"grid", grid_to_json(grid)},
          {"index_order", "iz * nx + ix"},
          {"level_db", db},
          {"components", comps},
          {"negative_count", map.negative_count},
          {"iterations", map.iterations},
          {"render_sigma", render_sigma}};
}

/// Raster: "SIAMMAP1", u32 nx, u32 nz, f64 x_min, z_min, spacing, frequency, then nx*nz f64
/// powers (little-endian, row = iz).
inline std::string encode_map_raster(const BeamformingMap& map, const FocusGrid& grid, double render_sigma = 0) {
  const auto v = map_export_values(map, grid, render_sigma);
  std::string out = "SIAMMAP1";
  auto put = [&out](const void* p, std::size_t n) {
    // host is little-endian on all supported targets
    out.append(static_cast<const char*>(p), n);
  };
  const auto nx = static_cast<std::uint32_t>(grid.nx), nz = static_cast<std::uint32_t>(grid.nz);
  put(&nx, 4);
  put(&nz, 4);
  for (double d : {grid.spec.x_min, grid.spec.z_min, grid.spec.spacing, map.frequency}) put(&d, 8);
  for (double d : v) put(&d, 8);
  return out;
}

/// Rows = angles, columns = frequencies or bands; Gamma or PSD in dB.
inline void write_surface_csv(std::ostream& os, const DirectivitySurface& s, bool gamma = true) {
  os << std::setprecision(10) << "theta_deg";
  for (double f : s.frequencies) os << ',' << f;
  os << '\n';
  const auto& m = gamma ? s.gamma_db : s.psd_db;
  for (std::size_t a = 0; a < s.angles.size(); ++a) {
    os << s.angles[a];
    for (std::size_t k = 0; k < s.frequencies.size(); ++k) {
      os << ',';
      const double v = m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
      if (!is_masked(v)) os << v;
    }
    os << '\n';
  }
}

inline nlohmann::json surface_metadata(const DirectivitySurface& s) {
  return {{"band_type", to_string(s.band_type)},
          {"averaging", s.averaging == AngleAveraging::db ? "db" : "linear"},
          {"angles_deg", s.angles},
          {"angle_std_deg", s.angle_std},
          {"nominal_angles_deg", s.nominal_angles},
          {"frequencies", s.frequencies},
          {"psd_reference", "dB re (20 uPa)^2 at 1 m"},
          {"gamma", "PSD_dB minus angle-averaged PSD_dB per frequency"}};
}

}  // namespace siam
