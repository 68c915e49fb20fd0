#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>

namespace siam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kReferencePressure = 20e-6;  // Pa

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Masked (missing) entries in spectra and surfaces are NaN.
inline constexpr double kMasked = std::numeric_limits<double>::quiet_NaN();
inline bool is_masked(double v) { return std::isnan(v); }

/// Power quantity (Pa^2 or Pa^2/Hz) to dB re (20 uPa)^2. Non-positive values map to floor_db.
inline double power_to_db(double power, double floor_db = -300.0) {
  if (is_masked(power)) return kMasked;
  if (!(power > 0.0)) return floor_db;
  return std::max(10.0 * std::log10(power / (kReferencePressure * kReferencePressure)), floor_db);
}

inline double db_to_power(double db) {
  if (is_masked(db)) return kMasked;
  return kReferencePressure * kReferencePressure * std::pow(10.0, db / 10.0);
}

/// FNV-1a, used for content hashes in manifests and file headers.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (auto b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(std::as_bytes(std::span(s.data(), s.size())), h);
}

}  // namespace siam
