#pragma once

// Scene and medium (de)serialization with strict key checking.

#include "siam/json_util.hpp"
#include "siam/propagation.hpp"
#include "siam/synthesis.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace siam {

inline nlohmann::json spectrum_to_json(const SourceSpectrum& s) {
  using K = SourceSpectrum::Kind;
  switch (s.kind) {
    case K::tone: return {{"kind", "tone"}, {"level", s.level}, {"frequency", s.frequency}};
    case K::table: {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& [f, p] : s.table) pts.push_back({f, p});
      return {{"kind", "table"}, {"points", pts}};
    }
    default: {
      nlohmann::json j{{"kind", "white"}, {"level", s.level}, {"f_low", s.f_low}};
      if (std::isfinite(s.f_high)) j["f_high"] = s.f_high;
      return j;
    }
  }
}

inline SourceSpectrum spectrum_from_json(const nlohmann::json& j, const std::string& path) {
  json::Object o(j, path);
  SourceSpectrum s;
  const auto kind = o.get<std::string>("kind");
  if (kind == "white") {
    o.allow_only({"kind", "level", "f_low", "f_high"});
    s.kind = SourceSpectrum::Kind::white;
    s.level = o.get<double>("level");
    s.f_low = o.get_or("f_low", 0.0);
    s.f_high = o.get_or("f_high", std::numeric_limits<double>::infinity());
  } else if (kind == "tone") {
    o.allow_only({"kind", "level", "frequency"});
    s.kind = SourceSpectrum::Kind::tone;
    s.level = o.get<double>("level");
    s.frequency = o.get<double>("frequency");
  } else if (kind == "table") {
    o.allow_only({"kind", "points"});
    s.kind = SourceSpectrum::Kind::table;
    const auto& pts = o.raw("points");
    if (!pts.is_array()) throw SchemaError(o.path("points"), "expected [[frequency, psd], ...]");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto p = json::Object::convert<Vec2>(pts[i], json::join(o.path("points"), i));
      if (!s.table.empty() && p.x() <= s.table.back().first)
        throw SchemaError(json::join(o.path("points"), i), "frequencies must increase");
      s.table.emplace_back(p.x(), p.y());
    }
  } else {
    throw SchemaError(o.path("kind"), "expected white, tone or table");
  }
  if (s.level < 0) throw SchemaError(o.path("level"), "must be >= 0");
  return s;
}

inline nlohmann::json medium_to_json(const MediumModel& m) {
  nlohmann::json j{{"speed_of_sound", m.speed_of_sound},
                   {"mach", {m.mach.x(), m.mach.y(), m.mach.z()}},
                   {"temperature", m.temperature},
                   {"relative_humidity", m.relative_humidity},
                   {"pressure", m.pressure},
                   {"absorption", m.absorption},
                   {"amiet_amplitude", m.amiet_amplitude}};
  if (m.shear_layer) {
    const auto& s = *m.shear_layer;
    j["shear_layer"] = {{"point", {s.point.x(), s.point.y(), s.point.z()}},
                        {"normal", {s.normal.x(), s.normal.y(), s.normal.z()}}};
  }
  return j;
}

inline MediumModel medium_from_json(const nlohmann::json& j, const std::string& path) {
  json::Object o(j, path);
  o.allow_only({"speed_of_sound", "mach", "temperature", "relative_humidity", "pressure", "absorption",
                "amiet_amplitude", "shear_layer"});
  MediumModel m;
  m.speed_of_sound = o.get_or("speed_of_sound", m.speed_of_sound);
  m.mach = o.get_or("mach", Vec3(Vec3::Zero()));
  m.temperature = o.get_or("temperature", m.temperature);
  m.relative_humidity = o.get_or("relative_humidity", m.relative_humidity);
  m.pressure = o.get_or("pressure", m.pressure);
  m.absorption = o.get_or("absorption", m.absorption);
  m.amiet_amplitude = o.get_or("amiet_amplitude", m.amiet_amplitude);
  if (o.has("shear_layer")) {
    const auto s = o.child("shear_layer");
    s.allow_only({"point", "normal"});
    m.shear_layer = ShearLayer{s.get<Vec3>("point"), s.get<Vec3>("normal")};
  }
  try {
    m.validate();
  } catch (const DomainError& e) {
    throw SchemaError(path, e.what());
  }
  return m;
}

inline nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : scene.sources) {
    nlohmann::json js{{"position", {s.position.x(), s.position.y(), s.position.z()}},
                      {"kind", s.kind == SourceKind::dipole ? "dipole" : "monopole"},
                      {"spectrum", spectrum_to_json(s.spectrum)}};
    if (s.kind == SourceKind::dipole) js["axis"] = {s.axis.x(), s.axis.y(), s.axis.z()};
    sources.push_back(js);
  }
  nlohmann::json j{{"sources", sources}, {"medium", medium_to_json(scene.medium)}, {"seed", scene.seed},
                   {"use_amiet", scene.use_amiet}};
  if (scene.noise) j["noise"] = spectrum_to_json(*scene.noise);
  return j;
}

inline Scene scene_from_json(const nlohmann::json& j, const std::string& path = "scene") {
  json::Object o(j, path);
  o.allow_only({"sources", "medium", "noise", "seed", "use_amiet"});
  Scene scene;
  const auto& src = o.raw("sources");
  if (!src.is_array()) throw SchemaError(o.path("sources"), "expected an array");
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::string sp = json::join(o.path("sources"), i);
    json::Object so(src[i], sp);
    so.allow_only({"position", "kind", "axis", "spectrum"});
    Source s;
    s.position = so.get<Vec3>("position");
    const auto kind = so.get_or<std::string>("kind", "monopole");
    if (kind == "dipole") {
      s.kind = SourceKind::dipole;
      s.axis = so.get_or("axis", Vec3(Vec3::UnitY()));
      if (!(s.axis.norm() > 0)) throw SchemaError(so.path("axis"), "must be non-zero");
      s.axis.normalize();
    } else if (kind != "monopole") {
      throw SchemaError(so.path("kind"), "expected monopole or dipole");
    }
    s.spectrum = spectrum_from_json(so.raw("spectrum"), so.path("spectrum"));
    scene.sources.push_back(std::move(s));
  }
  if (o.has("medium")) scene.medium = medium_from_json(o.raw("medium"), o.path("medium"));
  if (o.has("noise")) scene.noise = spectrum_from_json(o.raw("noise"), o.path("noise"));
  scene.seed = o.get_or<std::uint64_t>("seed", 0);
  scene.use_amiet = o.get_or("use_amiet", true);
  return scene;
}

inline Scene load_scene(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw SchemaError(file, "cannot open");
  std::stringstream ss;
  ss << is.rdbuf();
  return scene_from_json(json::parse(ss.str(), file));
}

}  // namespace siam
