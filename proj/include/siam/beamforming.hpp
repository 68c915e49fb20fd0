#pragma once

// Focus grids, level-true steering vectors, conventional beamforming and CLEAN-SC.

#include "siam/error.hpp"
#include "siam/geometry.hpp"
#include "siam/propagation.hpp"
#include "siam/spectral.hpp"
#include "siam/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace siam {

struct GridSpec {
  double x_min = 1.0, x_max = 4.0;
  double z_min = -3.0, z_max = 2.0;
  double spacing = 0.02;
  double y = 0.0;
  double delta_deg = 0.0;  // rotation about y (wing sweep)
  double aoa_deg = 0.0;    // then rotation about x
  Vec3 pivot = Vec3::Zero();
};

struct FocusGrid {
  GridSpec spec;
  std::size_t nx = 0, nz = 0;
  std::vector<Vec3> points;  // index = iz * nx + ix
  std::vector<Vec2> local;   // unrotated (x, z) of each point

  std::size_t size() const { return points.size(); }
};

inline std::size_t grid_axis_count(double lo, double hi, double spacing) {
  return static_cast<std::size_t>(std::floor((hi - lo) / spacing + 1e-9)) + 1;
}

/// Regular planar grid with inclusive endpoints, rotated about y then x around the pivot.
inline FocusGrid make_focus_grid(const GridSpec& spec) {
  if (!(spec.spacing > 0)) throw DomainError("make_focus_grid: spacing must be > 0");
  if (spec.x_max < spec.x_min || spec.z_max < spec.z_min) throw DomainError("make_focus_grid: invalid range");
  FocusGrid g;
  g.spec = spec;
  g.nx = grid_axis_count(spec.x_min, spec.x_max, spec.spacing);
  g.nz = grid_axis_count(spec.z_min, spec.z_max, spec.spacing);
  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(deg2rad(spec.aoa_deg), Vec3::UnitX()) * Eigen::AngleAxisd(deg2rad(spec.delta_deg), Vec3::UnitY()))
          .toRotationMatrix();
  g.points.reserve(g.nx * g.nz);
  g.local.reserve(g.nx * g.nz);
  for (std::size_t iz = 0; iz < g.nz; ++iz) {
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      const double x = spec.x_min + static_cast<double>(ix) * spec.spacing;
      const double z = spec.z_min + static_cast<double>(iz) * spec.spacing;
      const Vec3 p(x, spec.y, z);
      g.points.push_back(spec.pivot + rot * (p - spec.pivot));
      g.local.emplace_back(x, z);
    }
  }
  return g;
}

struct SteeringCorrections {
  bool convection = true;
  bool absorption = true;
  bool amiet = true;
};

/// Steering vectors for one frequency; column t belongs to focus point t.
struct SteeringSet {
  double frequency = 0.0;
  Eigen::MatrixXcd matrix;
  /// r_{t,0}: effective distance from each focus point to the reference point (m).
  std::vector<double> reference_distance;
  SteeringCorrections corrections;

  std::size_t sensors() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t points() const { return static_cast<std::size_t>(matrix.cols()); }
};

/// Frequency-independent travel times and distances between a grid and a sensor set,
/// computed once and reused for every frequency.
class SteeringGeometry {
 public:
  SteeringGeometry(const FocusGrid& grid, std::span<const Vec3> sensors, const Vec3& reference,
                   const MediumModel& medium, SteeringCorrections corrections = {})
      : medium_(medium), corrections_(corrections) {
    if (sensors.empty()) throw DomainError("steering: no sensors");
    medium_.validate();
    if (!corrections_.convection) medium_.mach = Vec3::Zero();
    const auto m = static_cast<Eigen::Index>(sensors.size());
    const auto n = static_cast<Eigen::Index>(grid.size());
    delay_.resize(m, n);
    distance_.resize(m, n);
    delay0_.resize(n);
    distance0_.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vec3& focus = grid.points[static_cast<std::size_t>(t)];
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto p = propagate(focus, sensors[static_cast<std::size_t>(i)], medium_, corrections_.amiet);
        delay_(i, t) = p.delay;
        distance_(i, t) = p.effective_distance;
      }
      const auto p0 = propagate(focus, reference, medium_, corrections_.amiet);
      delay0_[t] = p0.delay;
      distance0_[t] = p0.effective_distance;
    }
  }

  std::size_t sensors() const { return static_cast<std::size_t>(delay_.rows()); }
  std::size_t points() const { return static_cast<std::size_t>(delay_.cols()); }
  double delay(std::size_t sensor, std::size_t point) const { return delay_(sensor, point); }
  double distance(std::size_t sensor, std::size_t point) const { return distance_(sensor, point); }
  double reference_distance(std::size_t point) const { return distance0_[point]; }

  /// Formulation III: h_m = [r_m r_0 sum_l r_l^-2]^-1 exp(-j 2 pi f (tau_m - tau_0)).
  /// With absorption the transfer magnitudes carry the damping factor and h = g / |g|^2.
  SteeringSet at(double frequency) const {
    if (!(frequency > 0)) throw DomainError("steering: frequency must be > 0");
    const auto m = delay_.rows();
    const auto n = delay_.cols();
    SteeringSet s;
    s.frequency = frequency;
    s.corrections = corrections_;
    s.matrix.resize(m, n);
    s.reference_distance.resize(static_cast<std::size_t>(n));
    const bool damp = corrections_.absorption && medium_.absorption;
    const double alpha = damp ? atmospheric_absorption(frequency, medium_) : 0.0;
    const double omega = 2.0 * kPi * frequency;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double r0 = distance0_[t];
      double norm2 = 0;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double mag = r0 / distance_(i, t) * (damp ? std::pow(10.0, -alpha * distance_(i, t) / 20.0) : 1.0);
        s.matrix(i, t) = std::polar(mag, -omega * (delay_(i, t) - delay0_[t]));
        norm2 += mag * mag;
      }
      s.matrix.col(t) /= norm2;
      s.reference_distance[static_cast<std::size_t>(t)] = r0;
    }
    return s;
  }

 private:
  MediumModel medium_;
  SteeringCorrections corrections_;
  Eigen::MatrixXd delay_, distance_;
  Eigen::VectorXd delay0_, distance0_;
};

inline SteeringSet steering_formulation_iii(const FocusGrid& grid, std::span<const Vec3> sensors, const Vec3& reference,
                                            double frequency, const MediumModel& medium,
                                            SteeringCorrections corrections = {}) {
  return SteeringGeometry(grid, sensors, reference, medium, corrections).at(frequency);
}

/// Reference point r_{t,0} is the sub-array's geometric mean.
inline SteeringSet steering_formulation_iii(const FocusGrid& grid, const SubArray& sub, double frequency,
                                            const MediumModel& medium, SteeringCorrections corrections = {}) {
  const auto pts = sub.positions();
  return steering_formulation_iii(grid, pts, position_stats(pts).mean, frequency, medium, corrections);
}

enum class MapKind { conventional, clean_sc };

inline std::string to_string(MapKind k) { return k == MapKind::conventional ? "conventional" : "clean_sc"; }

struct CleanComponent {
  std::size_t index = 0;
  double power = 0.0;  // Pa^2 (or Pa^2/Hz) at 1 m
};

struct BeamformingMap {
  double frequency = 0.0;
  MapKind kind = MapKind::conventional;
  bool diagonal_removal = false;
  /// Source power at 1 m per focus point, signed (diagonal removal can go negative).
  /// For CLEAN-SC this is the residual dirty map.
  std::vector<double> values;
  std::vector<CleanComponent> components;
  std::size_t negative_count = 0;
  std::size_t iterations = 0;

  /// Values with negatives clamped to zero, for display and integration.
  std::vector<double> clamped() const {
    std::vector<double> out(values);
    for (auto& v : out) v = std::max(v, 0.0);
    return out;
  }

  double total_component_power() const {
    double s = 0;
    for (const auto& c : components) s += c.power;
    return s;
  }

  std::size_t peak_index() const {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  }
};

namespace detail {

inline void check_dimensions(const CrossSpectralMatrix& csm, const SteeringSet& steering) {
  if (csm.channels() != steering.sensors())
    throw DomainError("beamforming: CSM has " + std::to_string(csm.channels()) + " channels, steering has " +
                      std::to_string(steering.sensors()) + " sensors");
}

// Re(h_t^H C h_t) for all columns.
inline Eigen::VectorXd quadratic_forms(const Eigen::MatrixXcd& c, const Eigen::MatrixXcd& h) {
  const Eigen::MatrixXcd ch = c * h;
  return (h.conjugate().cwiseProduct(ch)).colwise().sum().real().transpose();
}

}  // namespace detail

/// b_t = r_{t,0}^2 h_t^H C h_t, with the CSM diagonal zeroed when diagonal_removal is set.
inline BeamformingMap conventional_beamform(const CrossSpectralMatrix& csm, const SteeringSet& steering,
                                            bool diagonal_removal) {
  detail::check_dimensions(csm, steering);
  Eigen::MatrixXcd c = csm.values;
  if (diagonal_removal) c.diagonal().setZero();
  const Eigen::VectorXd q = detail::quadratic_forms(c, steering.matrix);

  BeamformingMap map;
  map.frequency = steering.frequency;
  map.kind = MapKind::conventional;
  map.diagonal_removal = diagonal_removal;
  map.values.resize(steering.points());
  for (std::size_t t = 0; t < map.values.size(); ++t) {
    const double r0 = steering.reference_distance[t];
    map.values[t] = q[static_cast<Eigen::Index>(t)] * r0 * r0;
    if (map.values[t] < 0) ++map.negative_count;
  }
  return map;
}

struct CleanScParams {
  double loop_gain = 1.0;
  std::size_t max_iterations = 100;
  double stop_threshold = 1e-3;  // relative to the initial dirty-map peak
  bool diagonal_removal = true;
  std::size_t inner_iterations = 20;
};

/// CLEAN-SC. Each iteration takes the dirty-map peak, derives the source component that is
/// spatially coherent with it (fixed-point iteration when the diagonal is removed), subtracts
/// loop_gain times its CSM and records a clean component. Stops at max_iterations, when the
/// peak falls below stop_threshold of the initial peak, or when the entrywise 1-norm of the
/// degraded CSM would increase.
inline BeamformingMap clean_sc(const CrossSpectralMatrix& csm, const SteeringSet& steering,
                               const CleanScParams& params = {}) {
  detail::check_dimensions(csm, steering);
  if (!(params.loop_gain > 0 && params.loop_gain <= 1)) throw DomainError("clean_sc: loop_gain must be in (0, 1]");
  if (!csm.values.allFinite()) throw DomainError("clean_sc: CSM contains non-finite values");

  const bool dr = params.diagonal_removal;
  const auto& w_all = steering.matrix;
  const auto n = w_all.cols();

  Eigen::MatrixXcd g = csm.values;
  if (dr) g.diagonal().setZero();
  Eigen::VectorXd dirty = detail::quadratic_forms(g, w_all);
  // |w_tm|^2, used for the diagonal term of the map update
  const Eigen::MatrixXd w_abs2 = w_all.cwiseAbs2();

  BeamformingMap map;
  map.frequency = steering.frequency;
  map.kind = MapKind::clean_sc;
  map.diagonal_removal = dr;

  const double initial_peak = n > 0 ? dirty.maxCoeff() : 0.0;
  double norm_prev = g.cwiseAbs().sum();

  for (std::size_t it = 0; it < params.max_iterations && n > 0; ++it) {
    Eigen::Index t_max = 0;
    const double p_max = dirty.maxCoeff(&t_max);
    if (!(p_max > 0) || p_max <= params.stop_threshold * initial_peak) break;

    const Eigen::VectorXcd w = w_all.col(t_max);
    const Eigen::VectorXcd gw = g * w / p_max;
    Eigen::VectorXcd h = gw;
    if (dr) {
      for (std::size_t k = 0; k < params.inner_iterations; ++k) {
        const Eigen::VectorXd hh = h.cwiseAbs2();
        const Eigen::VectorXcd hw = hh.cast<Complex>().cwiseProduct(w);
        const double denom = std::sqrt(1.0 + w.dot(hw).real());
        h = (gw + hw) / denom;
      }
    }

    Eigen::MatrixXcd g_next = g;
    g_next.noalias() -= (params.loop_gain * p_max) * (h * h.adjoint());
    if (dr) g_next.diagonal().setZero();
    const double norm_next = g_next.cwiseAbs().sum();
    if (norm_next > norm_prev) break;

    // Component power seen through the level-true steering vector at the peak.
    const double wh2 = std::norm(w.dot(h));
    const double r0 = steering.reference_distance[static_cast<std::size_t>(t_max)];
    map.components.push_back({static_cast<std::size_t>(t_max), params.loop_gain * p_max * wh2 * r0 * r0});

    const Eigen::VectorXcd wh = w_all.adjoint() * h;
    Eigen::VectorXd update = wh.cwiseAbs2();
    if (dr) update -= w_abs2.transpose() * h.cwiseAbs2();
    dirty -= (params.loop_gain * p_max) * update;

    g = std::move(g_next);
    norm_prev = norm_next;
    map.iterations = it + 1;
  }

  map.values.resize(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    const double r0 = steering.reference_distance[static_cast<std::size_t>(t)];
    map.values[static_cast<std::size_t>(t)] = dirty[t] * r0 * r0;
    if (dirty[t] < 0) ++map.negative_count;
  }
  return map;
}

/// Clean components rendered with a unit-peak Gaussian kernel (export only).
inline std::vector<double> render_components(const BeamformingMap& map, const FocusGrid& grid, double sigma) {
  std::vector<double> out(grid.size(), 0.0);
  if (!(sigma > 0)) {
    for (const auto& c : map.components) out[c.index] += c.power;
    return out;
  }
  for (const auto& c : map.components) {
    const Vec2& center = grid.local[c.index];
    for (std::size_t t = 0; t < grid.size(); ++t) {
      const double d2 = (grid.local[t] - center).squaredNorm();
      out[t] += c.power * std::exp(-d2 / (2 * sigma * sigma));
    }
  }
  return out;
}

/// -3 dB main-lobe width along a line grid (nx == 1 or nz == 1), with linear interpolation
/// of the half-power crossings. Returns NaN if the lobe is not closed on both sides.
inline double mainlobe_width(std::span<const double> values, const FocusGrid& grid) {
  if (grid.nx != 1 && grid.nz != 1) throw DomainError("mainlobe_width: grid must be a line");
  if (values.size() != grid.size() || values.empty()) throw DomainError("mainlobe_width: size mismatch");
  const auto peak_it = std::max_element(values.begin(), values.end());
  const std::size_t peak = static_cast<std::size_t>(peak_it - values.begin());
  const double half = *peak_it / 2;
  const double step = grid.spec.spacing;

  double left = kMasked, right = kMasked;
  for (std::size_t i = peak; i > 0; --i) {
    if (values[i - 1] < half) {
      const double frac = (values[i] - half) / (values[i] - values[i - 1]);
      left = (static_cast<double>(i) - frac) * step;
      break;
    }
  }
  for (std::size_t i = peak; i + 1 < values.size(); ++i) {
    if (values[i + 1] < half) {
      const double frac = (values[i] - half) / (values[i] - values[i + 1]);
      right = (static_cast<double>(i) + frac) * step;
      break;
    }
  }
  return right - left;
}

}  // namespace siam
