#pragma once

// Geometry file: {"sensors": [{id, x, y, z, panel, pcb, design}], "plane": {"origin": [..], "normal": [..]},
//                 "extent": {x_min, x_max, z_min, z_max}}   (extent optional on load)
// CSV export: id,x,y,z

#include "siam/error.hpp"
#include "siam/geometry.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>

namespace siam {

inline nlohmann::json vec_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3) throw SchemaError(field, "expected array of 3 numbers");
  for (const auto& e : j)
    if (!e.is_number()) throw SchemaError(field, "expected array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json geometry_to_json(const ArrayGeometry& g) {
  nlohmann::json sensors = nlohmann::json::array();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& p = g.positions[i];
    const auto& h = g.hierarchy[i];
    sensors.push_back({{"id", i}, {"x", p.x()}, {"y", p.y()}, {"z", p.z()},
                       {"panel", h.panel}, {"pcb", h.pcb}, {"design", h.design}});
  }
  return {{"sensors", std::move(sensors)},
          {"plane", {{"origin", vec_to_json(g.plane.origin)}, {"normal", vec_to_json(g.plane.normal)}}},
          {"extent", {{"x_min", g.extent.x_min}, {"x_max", g.extent.x_max},
                      {"z_min", g.extent.z_min}, {"z_max", g.extent.z_max}}}};
}

inline ArrayGeometry geometry_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("sensors") || !j["sensors"].is_array())
    throw SchemaError("sensors", "missing sensor list");
  ArrayGeometry g;
  const auto& sensors = j["sensors"];
  g.positions.resize(sensors.size());
  g.hierarchy.resize(sensors.size());
  std::vector<char> seen(sensors.size(), 0);
  for (std::size_t k = 0; k < sensors.size(); ++k) {
    const auto& s = sensors[k];
    const std::string where = "sensors[" + std::to_string(k) + "]";
    for (const char* key : {"id", "x", "y", "z"})
      if (!s.contains(key) || !s[key].is_number()) throw SchemaError(where + "." + key, "missing number");
    const auto id = s["id"].get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= sensors.size() || seen[id])
      throw SchemaError(where + ".id", "ids must be a permutation of 0..N-1");
    seen[id] = 1;
    g.positions[id] = Vec3(s["x"].get<double>(), s["y"].get<double>(), s["z"].get<double>());
    g.hierarchy[id] = {s.value("panel", 0), s.value("pcb", 0), s.value("design", 0), 0};
  }
  // local_index counts sensors within a (panel, pcb) in id order
  std::map<std::pair<int, int>, int> counters;
  for (auto& h : g.hierarchy) h.local_index = counters[{h.panel, h.pcb}]++;

  if (j.contains("plane")) {
    const auto& p = j["plane"];
    g.plane.origin = vec_from_json(p.at("origin"), "plane.origin");
    g.plane.normal = vec_from_json(p.at("normal"), "plane.normal").normalized();
  } else if (!g.positions.empty()) {
    g.plane.origin = position_stats(g.positions).mean;
  }
  if (j.contains("extent")) {
    const auto& e = j["extent"];
    g.extent = {e.at("x_min").get<double>(), e.at("x_max").get<double>(), e.at("z_min").get<double>(),
                e.at("z_max").get<double>()};
  } else if (!g.positions.empty()) {
    g.extent = {g.positions[0].x(), g.positions[0].x(), g.positions[0].z(), g.positions[0].z()};
    for (const auto& p : g.positions) {
      g.extent.x_min = std::min(g.extent.x_min, p.x());
      g.extent.x_max = std::max(g.extent.x_max, p.x());
      g.extent.z_min = std::min(g.extent.z_min, p.z());
      g.extent.z_max = std::max(g.extent.z_max, p.z());
    }
  }
  return g;
}

inline void write_geometry_csv(std::ostream& os, const ArrayGeometry& g) {
  os << "id,x,y,z\n" << std::setprecision(10);
  for (std::size_t i = 0; i < g.size(); ++i)
    os << i << ',' << g.positions[i].x() << ',' << g.positions[i].y() << ',' << g.positions[i].z() << '\n';
}

inline void save_geometry_json(const std::string& path, const ArrayGeometry& g) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << geometry_to_json(g).dump(1) << '\n';
}

inline ArrayGeometry load_geometry_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path, e.what());
  }
  return geometry_from_json(j);
}

}  // namespace siam
