#pragma once

// Strict JSON field access: unknown keys and wrong types raise SchemaError with the field path.

#include "siam/error.hpp"
#include "siam/types.hpp"

#include <json.hpp>

#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace siam::json {

using nlohmann::json;

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
inline std::string join(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

/// Read-only view of one JSON object that knows its own field path.
class Object {
 public:
  Object(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw SchemaError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  /// Rejects keys outside the allowed set.
  void allow_only(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw SchemaError(join(path_, it.key()), "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return join(path_, key); }

  template <typename T>
  T get(const char* key) const {
    if (!j_.contains(key)) throw SchemaError(join(path_, key), "missing required field");
    return convert<T>(j_.at(key), join(path_, key));
  }

  template <typename T>
  T get_or(const char* key, T fallback) const {
    return j_.contains(key) ? convert<T>(j_.at(key), join(path_, key)) : fallback;
  }

  Object child(const char* key) const {
    if (!j_.contains(key)) throw SchemaError(join(path_, key), "missing required field");
    return Object(j_.at(key), join(path_, key));
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, Vec3>) {
      if (!v.is_array() || v.size() != 3) throw SchemaError(path, "expected [x, y, z]");
      Vec3 out;
      for (int i = 0; i < 3; ++i) out[i] = convert<double>(v[static_cast<std::size_t>(i)], join(path, static_cast<std::size_t>(i)));
      return out;
    } else if constexpr (std::is_same_v<T, Vec2>) {
      if (!v.is_array() || v.size() != 2) throw SchemaError(path, "expected [x, z]");
      return Vec2(convert<double>(v[0], join(path, std::size_t{0})), convert<double>(v[1], join(path, std::size_t{1})));
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw SchemaError(path, "expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw SchemaError(path, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw SchemaError(path, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<long long>() < 0 && !v.is_number_unsigned()) throw SchemaError(path, "expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw SchemaError(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw SchemaError(path, "expected an array of numbers");
      std::vector<double> out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<double>(v[i], join(path, i)));
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!v.is_array()) throw SchemaError(path, "expected an array of integers");
      std::vector<std::size_t> out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<std::size_t>(v[i], join(path, i)));
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported type");
    }
  }

 private:
  const json& j_;
  std::string path_;
};

inline json parse(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(source, std::string("parse error at byte ") + std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace siam::json
