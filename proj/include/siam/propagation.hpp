#pragma once

// Sound propagation in a uniform flow, atmospheric damping, and planar shear-layer refraction.

#include "siam/error.hpp"
#include "siam/types.hpp"

#include <cmath>
#include <optional>
#include <sstream>

namespace siam {

/// Planar interface between the flow region and the quiescent region.
/// The normal points from the flow side into the quiescent side.
struct ShearLayer {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();
};

struct MediumModel {
  double speed_of_sound = 343.0;       // m/s
  Vec3 mach = Vec3::Zero();             // flow direction times Mach number
  double temperature = 20.0;            // deg C
  double relative_humidity = 70.0;      // percent
  double pressure = 101.325;            // kPa
  std::optional<ShearLayer> shear_layer;
  bool absorption = true;               // apply atmospheric damping
  bool amiet_amplitude = false;         // use the refracted-path amplitude, not only its delay

  void validate() const {
    if (!(speed_of_sound > 0)) throw DomainError("medium: speed_of_sound must be > 0");
    if (!(mach.norm() < 1.0)) throw DomainError("medium: |mach| must be < 1");
    if (relative_humidity < 0 || relative_humidity > 100) throw DomainError("medium: humidity must be in 0..100");
    if (!(pressure > 0)) throw DomainError("medium: pressure must be > 0");
    if (shear_layer && !(shear_layer->normal.norm() > 0)) throw DomainError("medium: shear layer normal is zero");
  }
};

struct PathResult {
  double delay = 0.0;               // s
  double amplitude = 0.0;           // free-field 1/(4 pi r) convention
  double effective_distance = 0.0;  // c * delay
};

/// Monopole Green's function in uniform flow:
/// r~ = sqrt((M.d)^2 + beta^2 |d|^2), delay = (-(M.d) + r~) / (c beta^2), amplitude = 1/(4 pi r~).
inline PathResult green_convected(const Vec3& source, const Vec3& receiver, const MediumModel& medium) {
  const Vec3 d = receiver - source;
  const double dist2 = d.squaredNorm();
  if (!(dist2 > 0)) throw DomainError("green_convected: source and receiver coincide");
  const double md = medium.mach.dot(d);
  const double beta2 = 1.0 - medium.mach.squaredNorm();
  const double r_tilde = std::sqrt(md * md + beta2 * dist2);
  PathResult out;
  out.delay = (-md + r_tilde) / (medium.speed_of_sound * beta2);
  out.amplitude = 1.0 / (4.0 * kPi * r_tilde);
  out.effective_distance = medium.speed_of_sound * out.delay;
  return out;
}

/// Pure-tone atmospheric absorption coefficient (dB/m) after ISO 9613-1.
inline double atmospheric_absorption(double frequency, const MediumModel& medium) {
  if (frequency < 0) throw DomainError("atmospheric_absorption: frequency must be >= 0");
  if (frequency == 0) return 0.0;
  constexpr double T0 = 293.15;   // reference temperature, K
  constexpr double T01 = 273.16;  // triple point of water, K
  constexpr double pr = 101.325;  // reference pressure, kPa
  const double T = medium.temperature + 273.15;
  const double pa = medium.pressure / pr;
  const double C = -6.8346 * std::pow(T01 / T, 1.261) + 4.6151;
  const double h = medium.relative_humidity * std::pow(10.0, C) / pa;
  const double fr_o = pa * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h));
  const double fr_n = pa * std::pow(T / T0, -0.5) * (9.0 + 280.0 * h * std::exp(-4.170 * (std::pow(T / T0, -1.0 / 3.0) - 1.0)));
  const double f2 = frequency * frequency;
  const double alpha =
      8.686 * f2 *
      (1.84e-11 / pa * std::sqrt(T / T0) +
       std::pow(T / T0, -2.5) * (0.01275 * std::exp(-2239.1 / T) / (fr_o + f2 / fr_o) +
                                 0.1068 * std::exp(-3352.0 / T) / (fr_n + f2 / fr_n)));
  return alpha;
}

/// Amplitude factor 10^(-alpha d / 20), or 1 when absorption is disabled.
inline double absorption_factor(double frequency, double distance, const MediumModel& medium) {
  if (!medium.absorption) return 1.0;
  return std::pow(10.0, -atmospheric_absorption(frequency, medium) * distance / 20.0);
}

struct RefractedPath {
  PathResult path;
  Vec3 crossing = Vec3::Zero();
  int iterations = 0;
};

namespace detail {

struct TravelTime {
  double value;
  Vec3 gradient;
  Eigen::Matrix3d hessian;
};

// Convected segment source -> p, as a function of p.
inline TravelTime convected_time(const Vec3& source, const Vec3& p, const MediumModel& m) {
  const Vec3 d = p - source;
  const double c = m.speed_of_sound;
  const double beta2 = 1.0 - m.mach.squaredNorm();
  const Vec3 Ad = m.mach * m.mach.dot(d) + beta2 * d;
  const double r = std::sqrt(d.dot(Ad));
  const Eigen::Matrix3d A = m.mach * m.mach.transpose() + beta2 * Eigen::Matrix3d::Identity();
  TravelTime t;
  t.value = (-m.mach.dot(d) + r) / (c * beta2);
  t.gradient = (-m.mach + Ad / r) / (c * beta2);
  t.hessian = (A - Ad * Ad.transpose() / (r * r)) / (r * c * beta2);
  return t;
}

// Straight quiescent segment p -> receiver.
inline TravelTime straight_time(const Vec3& p, const Vec3& receiver, double c) {
  const Vec3 e = p - receiver;
  const double r = e.norm();
  const Vec3 u = e / r;
  TravelTime t;
  t.value = r / c;
  t.gradient = u / c;
  t.hessian = (Eigen::Matrix3d::Identity() - u * u.transpose()) / (r * c);
  return t;
}

}  // namespace detail

/// Refraction through a planar shear layer: the crossing point makes the total travel time
/// (convected segment, then straight quiescent segment) stationary. Solved with damped
/// Newton on the two in-plane coordinates and step halving; tolerance 1e-10 m.
inline RefractedPath amiet_correction(const Vec3& source, const Vec3& receiver, const MediumModel& medium) {
  if (!medium.shear_layer) throw DomainError("amiet_correction: medium has no shear layer");
  const Vec3 n = medium.shear_layer->normal.normalized();
  const Vec3& origin = medium.shear_layer->point;
  const double s_side = (source - origin).dot(n);
  const double r_side = (receiver - origin).dot(n);
  if (!(s_side < 0) || r_side < 0)
    throw DomainError("amiet_correction: source must be on the flow side and receiver on the quiescent side");

  const double c = medium.speed_of_sound;
  RefractedPath out;

  if (r_side < 1e-12) {
    out.path = green_convected(source, receiver, medium);
    out.crossing = receiver;
    return out;
  }

  const Vec3 seed_dir = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = (seed_dir - seed_dir.dot(n) * n).normalized();
  const Vec3 v = n.cross(u);
  auto point_at = [&](const Vec2& ab) -> Vec3 { return origin + ab.x() * u + ab.y() * v; };
  auto total = [&](const Vec3& p) {
    return detail::convected_time(source, p, medium).value + (p - receiver).norm() / c;
  };

  // Start from the straight line crossing.
  const Vec3 p0 = source + (receiver - source) * (-s_side / (r_side - s_side));
  Vec2 ab((p0 - origin).dot(u), (p0 - origin).dot(v));

  constexpr int kMaxIterations = 100;
  constexpr double kTolerance = 1e-10;
  double last_step = 0.0;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Vec3 p = point_at(ab);
    const auto t1 = detail::convected_time(source, p, medium);
    const auto t2 = detail::straight_time(p, receiver, c);
    const Vec3 g3 = t1.gradient + t2.gradient;
    const Eigen::Matrix3d h3 = t1.hessian + t2.hessian;
    const Vec2 g(u.dot(g3), v.dot(g3));
    Eigen::Matrix2d h;
    h << u.dot(h3 * u), u.dot(h3 * v), v.dot(h3 * u), v.dot(h3 * v);

    Vec2 step;
    const double det = h.determinant();
    if (h(0, 0) > 0 && det > 0) {
      step = -h.inverse() * g;
    } else {
      step = -g / std::max(g.norm(), 1e-300) * 1e-3;
    }

    const double f0 = t1.value + t2.value;
    double scale = 1.0;
    Vec2 next = ab + step;
    while (total(point_at(next)) > f0 + 1e-4 * scale * g.dot(step) && scale > 1e-12) {
      scale *= 0.5;
      next = ab + scale * step;
    }
    last_step = (scale * step).norm();
    ab = next;
    out.iterations = it + 1;
    if (last_step < kTolerance || g.norm() < 1e-18) {
      const Vec3 p_final = point_at(ab);
      const auto seg1 = green_convected(source, p_final, medium);
      const double r2 = (receiver - p_final).norm();
      const double r1_tilde = 1.0 / (4.0 * kPi * seg1.amplitude);
      out.crossing = p_final;
      out.path.delay = seg1.delay + r2 / c;
      out.path.amplitude = 1.0 / (4.0 * kPi * (r1_tilde + r2));
      out.path.effective_distance = c * out.path.delay;
      return out;
    }
  }
  std::ostringstream msg;
  msg << "amiet_correction: no convergence after " << kMaxIterations << " iterations (last step " << last_step
      << " m)";
  throw NumericalError(msg.str());
}

/// Path used by synthesis and steering. With a shear layer and use_amiet, in-flow to
/// out-of-flow paths are refracted; the amplitude stays the straight convected one unless
/// medium.amiet_amplitude is set.
inline PathResult propagate(const Vec3& source, const Vec3& receiver, const MediumModel& medium, bool use_amiet) {
  if (use_amiet && medium.shear_layer) {
    const Vec3 n = medium.shear_layer->normal.normalized();
    const double s_side = (source - medium.shear_layer->point).dot(n);
    const double r_side = (receiver - medium.shear_layer->point).dot(n);
    if (s_side < 0 && r_side >= 0) {
      auto refracted = amiet_correction(source, receiver, medium);
      if (!medium.amiet_amplitude) refracted.path.amplitude = green_convected(source, receiver, medium).amplitude;
      return refracted.path;
    }
    if (s_side >= 0 && r_side >= 0) {
      MediumModel still = medium;
      still.mach = Vec3::Zero();
      return green_convected(source, receiver, still);
    }
  }
  return green_convected(source, receiver, medium);
}

}  // namespace siam
