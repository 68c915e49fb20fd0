#pragma once

// ROI integration, directivity surfaces, octave polar tables, distance normalization and
// far-field comparison.

#include "siam/beamforming.hpp"
#include "siam/error.hpp"
#include "siam/geometry.hpp"
#include "siam/parallel.hpp"
#include "siam/spectral.hpp"
#include "siam/synthesis.hpp"
#include "siam/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace siam {

/// Polygon in grid-local (x, z) coordinates. Points on the boundary count as inside.
struct RegionOfInterest {
  std::vector<Vec2> polygon;
  std::string label;

  static RegionOfInterest box(double x_min, double x_max, double z_min, double z_max, std::string label = "roi") {
    return {{{x_min, z_min}, {x_max, z_min}, {x_max, z_max}, {x_min, z_max}}, std::move(label)};
  }

  double area() const {
    double a = 0;
    for (std::size_t i = 0; i < polygon.size(); ++i) {
      const auto& p = polygon[i];
      const auto& q = polygon[(i + 1) % polygon.size()];
      a += p.x() * q.y() - q.x() * p.y();
    }
    return std::abs(a) / 2;
  }

  void validate() const {
    if (polygon.size() < 3 || !(area() > 0)) throw DomainError("roi '" + label + "': degenerate polygon");
  }

  Vec2 centroid() const {
    Vec2 c = Vec2::Zero();
    for (const auto& p : polygon) c += p;
    return c / static_cast<double>(polygon.size());
  }

  bool contains(const Vec2& pt) const {
    constexpr double kTol = 1e-9;
    bool inside = false;
    for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
      const Vec2& a = polygon[i];
      const Vec2& b = polygon[j];
      // on-edge test
      const Vec2 ab = b - a;
      const double len2 = ab.squaredNorm();
      const double t = len2 > 0 ? std::clamp((pt - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      if ((a + t * ab - pt).norm() <= kTol) return true;
      if ((a.y() > pt.y()) != (b.y() > pt.y())) {
        const double x_cross = a.x() + (pt.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
        if (pt.x() < x_cross) inside = !inside;
      }
    }
    return inside;
  }
};

inline std::vector<std::size_t> roi_indices(const FocusGrid& grid, const RegionOfInterest& roi) {
  roi.validate();
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < grid.size(); ++t)
    if (roi.contains(grid.local[t])) out.push_back(t);
  if (out.empty()) throw DomainError("roi '" + roi.label + "' contains no grid points");
  return out;
}

/// Maps a grid-local (x, z) point to world coordinates with the grid's rotation.
inline Vec3 grid_to_world(const GridSpec& spec, const Vec2& local) {
  const Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(deg2rad(spec.aoa_deg), Vec3::UnitX()) * Eigen::AngleAxisd(deg2rad(spec.delta_deg), Vec3::UnitY()))
          .toRotationMatrix();
  const Vec3 p(local.x(), spec.y, local.y());
  return spec.pivot + rot * (p - spec.pivot);
}

/// Power inside the ROI: the sum of clean components for CLEAN-SC maps, the sum of clamped
/// map values for conventional maps (the latter includes the point-spread function).
inline double integrate_map(const BeamformingMap& map, const FocusGrid& grid, const RegionOfInterest& roi) {
  if (map.values.size() != grid.size()) throw DomainError("integrate_map: map and grid sizes differ");
  const auto idx = roi_indices(grid, roi);
  double sum = 0;
  if (map.kind == MapKind::clean_sc) {
    std::vector<char> in(grid.size(), 0);
    for (auto t : idx) in[t] = 1;
    for (const auto& c : map.components)
      if (in[c.index]) sum += c.power;
  } else {
    for (auto t : idx) sum += std::max(map.values[t], 0.0);
  }
  return sum;
}

inline Spectrum integrate_maps(std::span<const BeamformingMap> maps, const FocusGrid& grid,
                               const RegionOfInterest& roi) {
  Spectrum s;
  for (const auto& m : maps) {
    s.frequencies.push_back(m.frequency);
    s.values.push_back(integrate_map(m, grid, roi));
  }
  return s;
}

/// One integrated spectrum with the observation angle it was measured from.
struct AngleSpectrum {
  double theta = 90.0;
  double theta_std = 0.0;
  double nominal_theta = kMasked;
  Spectrum spectrum;
};

enum class AngleAveraging { db, linear };

/// Rows are angles, columns frequencies (or bands). Masked entries are NaN.
struct DirectivitySurface {
  std::vector<double> angles;
  std::vector<double> angle_std;
  std::vector<double> nominal_angles;
  std::vector<double> frequencies;
  BandType band_type = BandType::narrowband;
  AngleAveraging averaging = AngleAveraging::db;
  Eigen::MatrixXd psd;       // linear (Pa^2/Hz, or Pa^2 per band)
  Eigen::MatrixXd psd_db;    // dB re (20 uPa)^2
  Eigen::MatrixXd gamma_db;  // deviation from the angle average

  std::size_t argmax_angle(std::size_t col) const {
    std::size_t best = 0;
    double v = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < angles.size(); ++r) {
      const double g = gamma_db(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col));
      if (!is_masked(g) && g > v) {
        v = g;
        best = r;
      }
    }
    return best;
  }
};

namespace detail {

inline std::vector<double> merged_axis(std::span<const AngleSpectrum> spectra) {
  std::vector<double> axis;
  for (const auto& s : spectra) axis.insert(axis.end(), s.spectrum.frequencies.begin(), s.spectrum.frequencies.end());
  std::sort(axis.begin(), axis.end());
  std::vector<double> out;
  for (double f : axis)
    if (out.empty() || std::abs(f - out.back()) > 1e-9 * std::max(1.0, std::abs(f))) out.push_back(f);
  return out;
}

inline double lookup(const Spectrum& s, double f) {
  auto it = std::lower_bound(s.frequencies.begin(), s.frequencies.end(), f - 1e-9 * std::max(1.0, std::abs(f)));
  if (it == s.frequencies.end() || std::abs(*it - f) > 1e-9 * std::max(1.0, std::abs(f))) return kMasked;
  return s.values[static_cast<std::size_t>(it - s.frequencies.begin())];
}

}  // namespace detail

/// Gamma(theta, f) = PSD_dB(theta, f) - <PSD_dB(theta, f)>_theta. Bins missing at an angle are
/// masked there and left out of that frequency's average.
inline DirectivitySurface directivity(std::span<const AngleSpectrum> spectra,
                                      AngleAveraging averaging = AngleAveraging::db) {
  if (spectra.size() < 2) throw DomainError("directivity: at least two angles required");
  const BandType bt = spectra.front().spectrum.band_type;
  for (const auto& s : spectra)
    if (s.spectrum.band_type != bt) throw DomainError("directivity: mixed band types");

  DirectivitySurface d;
  d.band_type = bt;
  d.averaging = averaging;
  d.frequencies = detail::merged_axis(spectra);
  const auto na = static_cast<Eigen::Index>(spectra.size());
  const auto nf = static_cast<Eigen::Index>(d.frequencies.size());
  d.psd.resize(na, nf);
  d.psd_db.resize(na, nf);
  d.gamma_db.resize(na, nf);
  for (Eigen::Index a = 0; a < na; ++a) {
    const auto& s = spectra[static_cast<std::size_t>(a)];
    d.angles.push_back(s.theta);
    d.angle_std.push_back(s.theta_std);
    d.nominal_angles.push_back(s.nominal_theta);
    for (Eigen::Index k = 0; k < nf; ++k) {
      const double v = detail::lookup(s.spectrum, d.frequencies[static_cast<std::size_t>(k)]);
      d.psd(a, k) = v;
      d.psd_db(a, k) = power_to_db(v);
    }
  }
  for (Eigen::Index k = 0; k < nf; ++k) {
    double sum = 0;
    int count = 0;
    for (Eigen::Index a = 0; a < na; ++a) {
      if (is_masked(d.psd_db(a, k))) continue;
      sum += averaging == AngleAveraging::db ? d.psd_db(a, k) : d.psd(a, k);
      ++count;
    }
    const double mean = count == 0 ? kMasked
                        : averaging == AngleAveraging::db ? sum / count
                                                          : power_to_db(sum / count);
    for (Eigen::Index a = 0; a < na; ++a)
      d.gamma_db(a, k) = is_masked(d.psd_db(a, k)) || is_masked(mean) ? kMasked : d.psd_db(a, k) - mean;
  }
  return d;
}

/// Octave-band integrated PSD per angle, then Gamma per band.
inline DirectivitySurface octave_polar(const DirectivitySurface& surface) {
  if (surface.band_type != BandType::narrowband) throw DomainError("octave_polar: surface must be narrowband");
  std::vector<AngleSpectrum> banded;
  for (std::size_t a = 0; a < surface.angles.size(); ++a) {
    Spectrum s;
    s.frequencies = surface.frequencies;
    for (std::size_t k = 0; k < surface.frequencies.size(); ++k)
      s.values.push_back(surface.psd(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k)));
    banded.push_back({surface.angles[a], surface.angle_std[a], surface.nominal_angles[a], band_integrate(s, BandType::octave)});
  }
  return directivity(banded, surface.averaging);
}

/// Level at distance d expressed at the reference distance: PSD + 20 log10(d / d0).
inline Spectrum distance_normalize(const Spectrum& s, double distance, double reference = 1.0) {
  if (!(distance > 0) || !(reference > 0)) throw DomainError("distance_normalize: distances must be > 0");
  Spectrum out = s;
  const double g = (distance / reference) * (distance / reference);
  for (auto& v : out.values)
    if (!is_masked(v)) v *= g;
  return out;
}

struct MicSpectrum {
  Spectrum spectrum;
  double distance = 1.0;
};

struct FarFieldComparison {
  std::vector<double> frequencies;
  std::vector<double> integrated_db;
  std::vector<double> mic_mean_db;  // energetic mean of distance-normalized mics
  std::vector<double> delta_db;     // integrated - mic mean
  std::vector<Spectrum> normalized_mics;
  bool resampled = false;
  std::string note;

  double max_abs_delta(double f_lo, double f_hi) const {
    double m = 0;
    for (std::size_t i = 0; i < frequencies.size(); ++i)
      if (frequencies[i] >= f_lo && frequencies[i] <= f_hi && !is_masked(delta_db[i]))
        m = std::max(m, std::abs(delta_db[i]));
    return m;
  }
};

namespace detail {

inline bool same_axis(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > 1e-9 * std::max(1.0, std::abs(a[i]))) return false;
  return true;
}

inline double median_spacing(const std::vector<double>& f) {
  if (f.size() < 2) return std::numeric_limits<double>::infinity();
  std::vector<double> d;
  for (std::size_t i = 1; i < f.size(); ++i) d.push_back(f[i] - f[i - 1]);
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

// Linear interpolation in power; masked outside the source axis.
inline std::vector<double> resample(const Spectrum& s, const std::vector<double>& axis) {
  std::vector<double> out(axis.size(), kMasked);
  for (std::size_t i = 0; i < axis.size(); ++i) {
    const double f = axis[i];
    if (s.frequencies.empty() || f < s.frequencies.front() - 1e-9 || f > s.frequencies.back() + 1e-9) continue;
    auto it = std::lower_bound(s.frequencies.begin(), s.frequencies.end(), f - 1e-9);
    const std::size_t j = static_cast<std::size_t>(it - s.frequencies.begin());
    if (std::abs(s.frequencies[j] - f) <= 1e-9 || j == 0) {
      out[i] = s.values[j];
      continue;
    }
    const double t = (f - s.frequencies[j - 1]) / (s.frequencies[j] - s.frequencies[j - 1]);
    out[i] = s.values[j - 1] + t * (s.values[j] - s.values[j - 1]);
  }
  return out;
}

}  // namespace detail

/// Distance-normalizes every mic to the reference distance, averages them energetically and
/// compares with the integrated beamforming spectrum. If the axes differ, everything is
/// resampled onto the coarsest axis and the result is flagged.
inline FarFieldComparison farfield_compare(const Spectrum& integrated, std::span<const MicSpectrum> mics,
                                           double reference = 1.0) {
  if (mics.empty()) throw DomainError("farfield_compare: at least one mic required");
  FarFieldComparison out;
  for (const auto& m : mics) {
    if (m.spectrum.band_type != integrated.band_type) throw DomainError("farfield_compare: band types differ");
    out.normalized_mics.push_back(distance_normalize(m.spectrum, m.distance, reference));
  }

  bool aligned = true;
  for (const auto& m : out.normalized_mics) aligned = aligned && detail::same_axis(m.frequencies, integrated.frequencies);
  std::vector<double> axis = integrated.frequencies;
  std::vector<double> ref = integrated.values;
  std::vector<std::vector<double>> mic_vals;
  if (aligned) {
    for (const auto& m : out.normalized_mics) mic_vals.push_back(m.values);
  } else {
    out.resampled = true;
    double coarse = detail::median_spacing(axis);
    for (const auto& m : out.normalized_mics) {
      const double sp = detail::median_spacing(m.frequencies);
      if (sp > coarse) {
        coarse = sp;
        axis = m.frequencies;
      }
    }
    ref = detail::resample(integrated, axis);
    for (const auto& m : out.normalized_mics) mic_vals.push_back(detail::resample(m, axis));
    out.note = "frequency axes differ; resampled onto the coarsest axis (linear interpolation in power)";
  }

  out.frequencies = axis;
  bool any_overlap = false;
  for (std::size_t i = 0; i < axis.size(); ++i) {
    double sum = 0;
    int n = 0;
    for (const auto& v : mic_vals)
      if (!is_masked(v[i])) {
        sum += v[i];
        ++n;
      }
    const double mic_db = n ? power_to_db(sum / n) : kMasked;
    const double int_db = power_to_db(ref[i]);
    out.integrated_db.push_back(int_db);
    out.mic_mean_db.push_back(mic_db);
    const bool ok = !is_masked(mic_db) && !is_masked(int_db);
    out.delta_db.push_back(ok ? int_db - mic_db : kMasked);
    any_overlap = any_overlap || ok;
  }
  if (!any_overlap && out.resampled) out.note += "; axes do not overlap";
  return out;
}

/// Supplies the CSMs seen by a sub-array at the requested frequencies.
using CsmProvider = std::function<CsmSet(const SubArray&, std::span<const double>)>;

/// Exact CSMs synthesized from a scene for each sub-array.
inline CsmProvider exact_csm_provider(const Scene& scene) {
  return [scene](const SubArray& sub, std::span<const double> freqs) {
    const auto pts = sub.positions();
    return synthesize_csm(scene, pts, freqs);
  };
}

/// Sub-matrices of CSMs recorded on the parent geometry (channel i = sensor i). Frequencies
/// must match recorded bins.
inline CsmProvider recorded_csm_provider(CsmSet recorded) {
  return [recorded = std::move(recorded)](const SubArray& sub, std::span<const double> freqs) {
    CsmSet out;
    for (double f : freqs) {
      auto it = std::find_if(recorded.begin(), recorded.end(),
                             [f](const auto& c) { return std::abs(c.frequency - f) <= 1e-6 * std::max(1.0, f); });
      if (it == recorded.end()) throw DomainError("recorded CSM has no bin at " + std::to_string(f) + " Hz");
      out.push_back(select_channels(*it, sub.indices));
    }
    return out;
  };
}

struct DirectivityParams {
  std::vector<double> frequencies;
  GridSpec grid;
  RegionOfInterest roi;
  MediumModel medium;
  SteeringCorrections corrections;
  CleanScParams clean;
  BandType bands = BandType::narrowband;
  AngleAveraging averaging = AngleAveraging::db;
  std::size_t jobs = 1;
};

struct DirectivityResult {
  DirectivitySurface surface;
  std::vector<AngleSpectrum> spectra;
  std::vector<ObservationAngles> angles;   // from each sub-array's geometric mean
  std::vector<ObservationAngles> nominal;  // from each sub-array's nominal center
  Vec3 observation_reference = Vec3::Zero();
};

/// Sub-arrays -> CLEAN-SC per frequency -> ROI integration -> Gamma. Levels come out of
/// beamforming already referenced to 1 m, so spreading differences between sub-arrays are
/// removed before Gamma is formed.
inline DirectivityResult directivity_pipeline(std::span<const SubArray> subarrays, const CsmProvider& csms,
                                              const DirectivityParams& p) {
  if (subarrays.size() < 2) throw DomainError("directivity_pipeline: at least two sub-arrays required");
  if (p.frequencies.empty()) throw DomainError("directivity_pipeline: no frequencies");
  p.roi.validate();
  const FocusGrid grid = make_focus_grid(p.grid);
  roi_indices(grid, p.roi);

  DirectivityResult res;
  res.observation_reference = grid_to_world(p.grid, p.roi.centroid());
  res.spectra.resize(subarrays.size());
  res.angles.resize(subarrays.size());
  res.nominal.resize(subarrays.size());

  parallel_for(subarrays.size(), p.jobs, [&](std::size_t k) {
    const SubArray& sub = subarrays[k];
    if (sub.empty()) throw DomainError("directivity_pipeline: sub-array " + std::to_string(k) + " is empty");
    const auto pts = sub.positions();
    const auto stats = position_stats(pts);
    const SteeringGeometry steer(grid, pts, stats.mean, p.medium, p.corrections);
    const CsmSet set = csms(sub, p.frequencies);
    Spectrum s;
    for (const auto& c : set) {
      const auto map = clean_sc(c, steer.at(c.frequency), p.clean);
      s.frequencies.push_back(c.frequency);
      s.values.push_back(integrate_map(map, grid, p.roi));
    }
    if (p.bands != BandType::narrowband) s = band_integrate(s, p.bands);
    res.angles[k] = observation_angles(stats.mean, res.observation_reference, stats.std);
    res.nominal[k] = observation_angles(sub.nominal_center, res.observation_reference);
    res.spectra[k] = {res.angles[k].theta, res.angles[k].theta_std, res.nominal[k].theta, std::move(s)};
  });

  res.surface = directivity(res.spectra, p.averaging);
  return res;
}

}  // namespace siam
