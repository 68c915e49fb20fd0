#pragma once

// Array layout: PCB designs, panel tiling, optimal target layouts and sub-array sampling.
//
// Tunnel frame: x downstream, y from the model toward the array, z vertical.
// The array lies in a plane of constant y.

#include "siam/error.hpp"
#include "siam/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace siam {

inline constexpr int kSensorsPerPcb = 50;
inline constexpr int kPcbDesigns = 4;
inline constexpr int kPcbsPerPanel = 16;
inline constexpr int kSensorsPerPanel = kSensorsPerPcb * kPcbsPerPanel;
inline constexpr int kSensorsPerFpga = 200;

// PCB extent. Boards are mounted with the long side along x.
inline constexpr double kPcbLength = 0.500;
inline constexpr double kPcbWidth = 0.250;
inline constexpr double kPanelLength = 4 * kPcbLength;  // 2 m along x
inline constexpr double kPanelHeight = 4 * kPcbWidth;   // 1 m along z

// Each sensor centers a 5 mm radius free area.
inline constexpr double kEdgeClearance = 0.005;
inline constexpr double kMinSensorSpacing = 0.010;

inline constexpr double kGoldenAngle = kPi * (3.0 - 2.2360679774997896964);

struct PcbLayout {
  int design_id = 0;
  double length = kPcbLength;
  double width = kPcbWidth;
  /// (u along length, v along width), relative to the PCB corner.
  std::vector<Vec2> sensor_positions;
  /// Minimum pairwise distance actually achieved by the placement.
  double min_spacing = 0.0;
};

namespace detail {

inline double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base);
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

inline double min_pairwise_distance(std::span<const Vec2> pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, (pts[i] - pts[j]).norm());
  return best;
}

}  // namespace detail

/// Seeded placement of 50 sensors on one PCB design.
///
/// Candidates come from a Halton (2,3) sequence with a seeded Cranley-Patterson
/// rotation; a candidate is kept if it respects the current spacing target. The
/// target starts well above the 10 mm hard limit and shrinks until 50 sensors fit.
inline PcbLayout generate_pcb_layout(int design_id, std::uint64_t seed) {
  if (design_id < 0 || design_id >= kPcbDesigns)
    throw DomainError("generate_pcb_layout: design_id must be in 0..3");

  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(design_id + 1) * 0xBF58476D1CE4E5B9ull);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double shift_u = uni(rng);
  const double shift_v = uni(rng);

  const double span_u = kPcbLength - 2 * kEdgeClearance;
  const double span_v = kPcbWidth - 2 * kEdgeClearance;
  constexpr std::uint64_t kCandidates = 20000;
  constexpr int kMaxRetries = 60;

  double spacing = 0.045;
  for (int attempt = 0; attempt < kMaxRetries && spacing >= kMinSensorSpacing; ++attempt, spacing *= 0.97) {
    std::vector<Vec2> placed;
    placed.reserve(kSensorsPerPcb);
    for (std::uint64_t i = 1; i <= kCandidates && placed.size() < kSensorsPerPcb; ++i) {
      double u = detail::radical_inverse(i, 2) + shift_u;
      double v = detail::radical_inverse(i, 3) + shift_v;
      u -= std::floor(u);
      v -= std::floor(v);
      Vec2 p(kEdgeClearance + u * span_u, kEdgeClearance + v * span_v);
      bool ok = std::all_of(placed.begin(), placed.end(),
                            [&](const Vec2& q) { return (p - q).norm() >= spacing; });
      if (ok) placed.push_back(p);
    }
    if (placed.size() == kSensorsPerPcb) {
      PcbLayout layout;
      layout.design_id = design_id;
      layout.sensor_positions = std::move(placed);
      layout.min_spacing = detail::min_pairwise_distance(layout.sensor_positions);
      return layout;
    }
  }
  throw ConstraintError("generate_pcb_layout: cannot place 50 sensors with 10 mm spacing");
}

struct SensorInfo {
  int panel = 0;
  int pcb = 0;  // index within the panel, 0..15
  int design = 0;
  int local_index = 0;
};

struct ArrayPlane {
  Vec3 origin = Vec3::Zero();
  Vec3 normal = Vec3::UnitY();
};

/// Bounding rectangle of the panel build in the array plane.
struct PlaneExtent {
  double x_min = 0, x_max = 0, z_min = 0, z_max = 0;
  double length() const { return x_max - x_min; }
  double height() const { return z_max - z_min; }
  Vec2 center() const { return {(x_min + x_max) / 2, (z_min + z_max) / 2}; }
};

struct ArrayFrame {
  double center_x = 3.0;
  double center_z = -0.5;
  double plane_y = 3.39;
};

struct ArrayGeometry {
  std::vector<Vec3> positions;
  std::vector<SensorInfo> hierarchy;
  ArrayPlane plane;
  PlaneExtent extent;

  std::size_t size() const { return positions.size(); }

  /// Lift an in-plane (x, z) coordinate onto the array plane.
  Vec3 on_plane(const Vec2& xz) const { return {xz.x(), plane.origin.y(), xz.y()}; }
};

using GeometryPtr = std::shared_ptr<const ArrayGeometry>;

/// Tile panels of 2x2 four-PCB patterns without gaps. Panels are 2 m along x and 1 m along z.
inline ArrayGeometry assemble_full_array(int panels_x, int panels_z, std::uint64_t seed, const ArrayFrame& frame = {}) {
  if (panels_x < 1 || panels_z < 1) throw DomainError("assemble_full_array: panel counts must be >= 1");

  std::array<PcbLayout, kPcbDesigns> designs;
  for (int d = 0; d < kPcbDesigns; ++d) designs[d] = generate_pcb_layout(d, seed);

  ArrayGeometry g;
  const double total_x = panels_x * kPanelLength;
  const double total_z = panels_z * kPanelHeight;
  g.extent = {frame.center_x - total_x / 2, frame.center_x + total_x / 2, frame.center_z - total_z / 2,
              frame.center_z + total_z / 2};
  g.plane.origin = Vec3(frame.center_x, frame.plane_y, frame.center_z);
  g.plane.normal = Vec3::UnitY();

  const std::size_t total = static_cast<std::size_t>(panels_x) * panels_z * kSensorsPerPanel;
  g.positions.reserve(total);
  g.hierarchy.reserve(total);

  const double pattern_x = 2 * kPcbLength;
  const double pattern_z = 2 * kPcbWidth;
  for (int pz = 0; pz < panels_z; ++pz) {
    for (int px = 0; px < panels_x; ++px) {
      const int panel_id = pz * panels_x + px;
      for (int qz = 0; qz < 2; ++qz) {
        for (int qx = 0; qx < 2; ++qx) {
          for (int design = 0; design < kPcbDesigns; ++design) {
            const int bx = design % 2;
            const int bz = design / 2;
            const int pcb_id = (qz * 2 + qx) * kPcbDesigns + design;
            const double ox = g.extent.x_min + px * kPanelLength + qx * pattern_x + bx * kPcbLength;
            const double oz = g.extent.z_min + pz * kPanelHeight + qz * pattern_z + bz * kPcbWidth;
            const auto& layout = designs[design];
            for (int k = 0; k < kSensorsPerPcb; ++k) {
              const Vec2& uv = layout.sensor_positions[k];
              g.positions.emplace_back(ox + uv.x(), frame.plane_y, oz + uv.y());
              g.hierarchy.push_back({panel_id, pcb_id, design, k});
            }
          }
        }
      }
    }
  }
  return g;
}

/// Global PCB index; four consecutive PCBs of a panel feed one FPGA.
inline int global_pcb_index(const SensorInfo& s) { return s.panel * kPcbsPerPanel + s.pcb; }
inline int fpga_of(const SensorInfo& s) { return global_pcb_index(s) / (kSensorsPerFpga / kSensorsPerPcb); }

/// Sensor indices served by one FPGA, in acquisition channel order.
inline std::vector<std::size_t> fpga_channels(const ArrayGeometry& g, int fpga_id) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (fpga_of(g.hierarchy[i]) == fpga_id) out.push_back(i);
  return out;
}

/// Sunflower layout: point n at radius (aperture/2) sqrt(n/(count-1)), azimuth n * golden angle.
inline std::vector<Vec2> fermat_spiral(int count, double aperture, const Vec2& center) {
  if (count < 1) throw DomainError("fermat_spiral: count must be >= 1");
  if (!(aperture > 0)) throw DomainError("fermat_spiral: aperture must be > 0");
  std::vector<Vec2> pts;
  pts.reserve(count);
  if (count == 1) {
    pts.push_back(center);
    return pts;
  }
  const double r_max = aperture / 2;
  for (int n = 0; n < count; ++n) {
    const double r = r_max * std::sqrt(static_cast<double>(n) / (count - 1));
    const double phi = n * kGoldenAngle;
    pts.emplace_back(center.x() + r * std::cos(phi), center.y() + r * std::sin(phi));
  }
  return pts;
}

struct SubArray {
  GeometryPtr parent;
  std::vector<std::size_t> indices;
  std::vector<Vec3> target_positions;
  /// Parallel to indices: distance of each selected sensor to the target it replaced.
  std::vector<double> match_distances;
  /// Parallel to indices: which target produced the selection.
  std::vector<std::size_t> target_of;
  Vec3 nominal_center = Vec3::Zero();
  double epsilon = 0.0;
  std::size_t discarded = 0;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(parent->positions[i]);
    return out;
  }
};

/// Greedy matching of targets (in order) to the nearest unused sensor within epsilon.
/// Ties go to the lowest sensor index. Targets without a sensor in range are discarded.
inline SubArray sample_subarray(GeometryPtr geometry, std::span<const Vec3> targets, double epsilon,
                                std::optional<Vec3> nominal_center = std::nullopt) {
  if (!geometry) throw DomainError("sample_subarray: null geometry");
  if (!(epsilon > 0)) throw DomainError("sample_subarray: epsilon must be > 0");

  SubArray sub;
  sub.parent = geometry;
  sub.epsilon = epsilon;
  sub.target_positions.assign(targets.begin(), targets.end());
  if (nominal_center) {
    sub.nominal_center = *nominal_center;
  } else if (!targets.empty()) {
    sub.nominal_center = targets.front();
  }

  const auto& pos = geometry->positions;
  std::vector<char> used(pos.size(), 0);
  const double eps2 = epsilon * epsilon;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    std::size_t best = pos.size();
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (used[i]) continue;
      const double d2 = (pos[i] - targets[t]).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    if (best < pos.size() && best_d2 <= eps2) {
      used[best] = 1;
      sub.indices.push_back(best);
      sub.match_distances.push_back(std::sqrt(best_d2));
      sub.target_of.push_back(t);
    } else {
      ++sub.discarded;
    }
  }
  return sub;
}

/// Convenience overload for in-plane (x, z) targets.
inline SubArray sample_subarray(GeometryPtr geometry, std::span<const Vec2> targets_xz, double epsilon) {
  std::vector<Vec3> lifted;
  lifted.reserve(targets_xz.size());
  for (const auto& t : targets_xz) lifted.push_back(geometry->on_plane(t));
  return sample_subarray(geometry, lifted, epsilon);
}

struct SubArrayStats {
  Vec3 mean = Vec3::Zero();
  /// Population standard deviation (divide by N) per axis.
  Vec3 std = Vec3::Zero();
};

inline SubArrayStats position_stats(std::span<const Vec3> pts) {
  if (pts.empty()) throw DomainError("subarray_stats: empty sub-array");
  SubArrayStats s;
  for (const auto& p : pts) s.mean += p;
  s.mean /= static_cast<double>(pts.size());
  Vec3 var = Vec3::Zero();
  for (const auto& p : pts) var += (p - s.mean).cwiseAbs2();
  s.std = (var / static_cast<double>(pts.size())).cwiseSqrt();
  return s;
}

inline SubArrayStats subarray_stats(const SubArray& sub) {
  if (sub.empty()) throw DomainError("subarray_stats: empty sub-array");
  const auto pts = sub.positions();
  return position_stats(pts);
}

/// Pitch (theta) and roll (phi) angles in degrees; theta = 90 is broadside.
struct ObservationAngles {
  double theta = 90.0;
  double phi = 0.0;
  double theta_std = 0.0;
  double phi_std = 0.0;
};

/// Angles of an observer seen from a reference point. The perpendicular distance is
/// taken along the array normal (y). A positional spread maps to an angular spread as
/// the half-difference of the angles at observer +/- spread.
inline ObservationAngles observation_angles(const Vec3& observer, const Vec3& reference,
                                            const std::optional<Vec3>& spread = std::nullopt) {
  const double d_perp = std::abs(observer.y() - reference.y());
  if (!(d_perp > 1e-12)) throw DomainError("observation_angles: zero perpendicular distance");

  auto theta_of = [&](double x) { return 90.0 + rad2deg(std::atan((x - reference.x()) / d_perp)); };
  auto phi_of = [&](double z) { return rad2deg(std::atan((z - reference.z()) / d_perp)); };

  ObservationAngles a;
  a.theta = theta_of(observer.x());
  a.phi = phi_of(observer.z());
  if (spread) {
    const Vec3 s = spread->cwiseAbs();
    a.theta_std = (theta_of(observer.x() + s.x()) - theta_of(observer.x() - s.x())) / 2;
    a.phi_std = (phi_of(observer.z() + s.z()) - phi_of(observer.z() - s.z())) / 2;
  }
  return a;
}

/// Fermat-spiral sub-arrays with centers equally spaced along the long axis, from the
/// left edge of the build to the right edge. Edge sub-arrays lose the sensors that fall
/// outside the array.
inline std::vector<SubArray> pitch_subarray_series(GeometryPtr geometry, int count, double aperture, int mics,
                                                   double epsilon) {
  if (count < 1) throw DomainError("pitch_subarray_series: count must be >= 1");
  const auto& ext = geometry->extent;
  std::vector<SubArray> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double x = count == 1 ? ext.center().x() : ext.x_min + k * ext.length() / (count - 1);
    const Vec2 c(x, ext.center().y());
    const auto spiral = fermat_spiral(mics, aperture, c);
    auto sub = sample_subarray(geometry, spiral, epsilon);
    sub.nominal_center = geometry->on_plane(c);
    out.push_back(std::move(sub));
  }
  return out;
}

/// Aperture scaled as d_ref * f_ref / f, held constant below f_ref and above f_max.
inline double aperture_for_frequency(double f, double d_ref, double f_ref, double f_max = 16000.0) {
  if (!(d_ref > 0) || !(f_ref > 0)) throw DomainError("aperture_for_frequency: d_ref and f_ref must be > 0");
  const double fc = std::clamp(f, f_ref, std::max(f_ref, f_max));
  return d_ref * f_ref / fc;
}

inline std::map<double, SubArray> freq_dependent_subarrays(GeometryPtr geometry, const Vec2& center, double d_ref,
                                                           double f_ref, int mics, std::span<const double> bands,
                                                           double epsilon, double f_max = 16000.0) {
  std::map<double, SubArray> out;
  for (double f : bands) {
    const double d = aperture_for_frequency(f, d_ref, f_ref, f_max);
    auto sub = sample_subarray(geometry, fermat_spiral(mics, d, center), epsilon);
    sub.nominal_center = geometry->on_plane(center);
    out.emplace(f, std::move(sub));
  }
  return out;
}

/// Sub-array comparable to a conventional 140-microphone wind-tunnel array.
inline SubArray dnw_like_subarray(GeometryPtr geometry, const Vec2& center, double aperture = 2.0, int mics = 140,
                                  double epsilon = 0.1) {
  auto sub = sample_subarray(geometry, fermat_spiral(mics, aperture, center), epsilon);
  sub.nominal_center = geometry->on_plane(center);
  return sub;
}

/// Sub-array from explicit sensor indices (e.g. loaded from a file).
inline SubArray explicit_subarray(GeometryPtr geometry, std::vector<std::size_t> indices) {
  SubArray sub;
  sub.parent = geometry;
  std::vector<char> seen(geometry->size(), 0);
  for (auto i : indices) {
    if (i >= geometry->size()) throw DomainError("explicit_subarray: index out of range");
    if (seen[i]) throw DomainError("explicit_subarray: duplicate index");
    seen[i] = 1;
    sub.target_positions.push_back(geometry->positions[i]);
    sub.match_distances.push_back(0.0);
    sub.target_of.push_back(sub.indices.size());
    sub.indices.push_back(i);
  }
  sub.epsilon = std::numeric_limits<double>::min();
  if (!sub.indices.empty()) sub.nominal_center = position_stats(sub.positions()).mean;
  return sub;
}

}  // namespace siam
