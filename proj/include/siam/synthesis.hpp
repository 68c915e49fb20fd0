#pragma once

// Ground-truth generation: multichannel pressure time series and exact CSMs for a scene.

#include "siam/error.hpp"
#include "siam/fft.hpp"
#include "siam/propagation.hpp"
#include "siam/spectral.hpp"
#include "siam/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace siam {

/// Source auto-power referenced to 1 m.
struct SourceSpectrum {
  enum class Kind { white, tone, table };
  Kind kind = Kind::white;
  double level = 1.0;      // white: PSD (Pa^2/Hz); tone: mean square (Pa^2)
  double frequency = 1000; // tone frequency (Hz)
  double f_low = 0.0;      // white band limits
  double f_high = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, double>> table;  // (Hz, Pa^2/Hz), linear interpolation, 0 outside

  /// PSD at f. A tone contributes its mean square only at exactly its own frequency.
  double psd(double f) const {
    switch (kind) {
      case Kind::white: return (f >= f_low && f <= f_high) ? level : 0.0;
      case Kind::tone: return std::abs(f - frequency) < 1e-9 ? level : 0.0;
      case Kind::table: {
        if (table.empty() || f < table.front().first || f > table.back().first) return 0.0;
        auto it = std::lower_bound(table.begin(), table.end(), f,
                                   [](const auto& e, double v) { return e.first < v; });
        if (it == table.begin()) return it->second;
        auto prev = it - 1;
        const double t = (f - prev->first) / (it->first - prev->first);
        return prev->second + t * (it->second - prev->second);
      }
    }
    return 0.0;
  }

  double highest_frequency() const {
    switch (kind) {
      case Kind::white: return f_high;
      case Kind::tone: return frequency;
      case Kind::table: return table.empty() ? 0.0 : table.back().first;
    }
    return 0.0;
  }
};

enum class SourceKind { monopole, dipole };

struct Source {
  Vec3 position = Vec3::Zero();
  SourceKind kind = SourceKind::monopole;
  Vec3 axis = Vec3::UnitY();  // dipole axis, unit length
  SourceSpectrum spectrum;

  /// Power weighting toward a receiver: 1 for a monopole, cos^2 to the axis for a dipole.
  double directivity(const Vec3& receiver) const {
    if (kind == SourceKind::monopole) return 1.0;
    const Vec3 d = receiver - position;
    const double n = d.norm();
    if (!(n > 0)) return 0.0;
    const double c = axis.dot(d) / n;
    return c * c;
  }
};

struct Scene {
  std::vector<Source> sources;
  MediumModel medium;
  std::optional<SourceSpectrum> noise;  // per-channel incoherent noise PSD
  std::uint64_t seed = 0;
  bool use_amiet = true;

  void validate() const {
    medium.validate();
    for (const auto& s : sources) {
      if (s.spectrum.level < 0) throw DomainError("scene: source power must be >= 0");
      if (s.kind == SourceKind::dipole && std::abs(s.axis.norm() - 1.0) > 1e-9)
        throw DomainError("scene: dipole axis must be unit length");
      for (const auto& [f, p] : s.spectrum.table)
        if (p < 0) throw DomainError("scene: table PSD must be >= 0");
    }
  }
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Seeded Gaussian noise of length n shaped to a one-sided PSD; n is even.
inline std::vector<double> shaped_noise(std::size_t n, double rate, const SourceSpectrum& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RealFft fwd(n);
  auto in = fwd.input();
  for (auto& x : in) x = normal(rng);
  auto spec_in = fwd.execute();
  InverseRealFft inv(n);
  auto bins = inv.input();
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const double f = rate * static_cast<double>(k) / n;
    // unit-variance white noise has one-sided PSD 2/rate
    bins[k] = spec_in[k] * std::sqrt(spec.psd(f) * rate / 2.0);
  }
  auto out = inv.execute();
  std::vector<double> y(out.begin(), out.end());
  for (auto& v : y) v /= static_cast<double>(n);
  return y;
}

inline constexpr int kDelayHalfTaps = 32;
inline constexpr double kPreRollSeconds = 0.25;
inline constexpr double kDelayKaiserBeta = 8.0;

/// 64 taps for reading a signal at index i0 + mu (0 <= mu < 1): weights for i0-31 .. i0+32.
inline std::array<double, 2 * kDelayHalfTaps> fractional_delay_taps(double mu) {
  std::array<double, 2 * kDelayHalfTaps> h{};
  const double i0_beta = std::cyl_bessel_i(0.0, kDelayKaiserBeta);
  for (int k = -kDelayHalfTaps + 1; k <= kDelayHalfTaps; ++k) {
    const double x = k - mu;
    const double r = x / kDelayHalfTaps;
    const double w = std::abs(r) >= 1.0 ? 0.0 : std::cyl_bessel_i(0.0, kDelayKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(kPi * x) / (kPi * x);
    h[k + kDelayHalfTaps - 1] = w * sinc;
  }
  return h;
}

}  // namespace detail

/// Sum of delayed, attenuated source signals plus seeded incoherent noise at each sensor.
/// Each source and each channel's noise draws from its own seeded stream, so adding noise
/// or sources leaves the other realizations unchanged.
inline TimeSeries synthesize_timeseries(const Scene& scene, std::span<const Vec3> sensors, double rate,
                                        double duration, std::size_t welch_block = 1024) {
  scene.validate();
  if (!(rate > 0) || !(duration > 0)) throw DomainError("synthesize_timeseries: rate and duration must be > 0");
  const auto n = static_cast<std::size_t>(std::llround(duration * rate));
  if (n < 2 * welch_block) throw DomainError("synthesize_timeseries: record shorter than two Welch blocks");
  const std::size_t m = sensors.size();

  TimeSeries ts;
  ts.rate = rate;
  ts.samples = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));

  const double flat_limit = 0.8 * rate / 2.0;
  for (std::size_t si = 0; si < scene.sources.size(); ++si) {
    const auto& src = scene.sources[si];
    if (src.spectrum.highest_frequency() > flat_limit)
      ts.warnings.push_back("source " + std::to_string(si) +
                            ": content above 0.8 x Nyquist, fractional-delay interpolation is not flat there");

    std::vector<PathResult> paths(m);
    double max_delay = 0;
    for (std::size_t ch = 0; ch < m; ++ch) {
      paths[ch] = propagate(src.position, sensors[ch], scene.medium, scene.use_amiet);
      max_delay = std::max(max_delay, paths[ch].delay);
    }
    // Fixed pre-roll keeps the source realization independent of the sensor set.
    const double preroll = std::max(detail::kPreRollSeconds, max_delay);
    const auto pre = static_cast<std::size_t>(std::ceil(preroll * rate)) + detail::kDelayHalfTaps + 1;
    std::size_t len = n + pre + detail::kDelayHalfTaps + 1;
    len = (len + 4095) / 4096 * 4096;

    const auto seed = detail::mix_seed(scene.seed, si);
    std::vector<double> signal;
    const bool tone = src.spectrum.kind == SourceSpectrum::Kind::tone;
    double tone_phase = 0;
    if (tone) {
      std::mt19937_64 rng(seed);
      tone_phase = std::uniform_real_distribution<double>(0.0, 2 * kPi)(rng);
      signal.resize(len);
      const double amp = std::sqrt(2.0 * src.spectrum.level);
      for (std::size_t i = 0; i < len; ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(pre)) / rate;
        signal[i] = amp * std::sin(2 * kPi * src.spectrum.frequency * t + tone_phase);
      }
    } else {
      signal = detail::shaped_noise(len, rate, src.spectrum, seed);
    }

    // Spectrum of the source signal, reused for per-channel absorption filtering.
    std::vector<Complex> source_bins;
    if (scene.medium.absorption && !tone) {
      RealFft fwd(len);
      std::copy(signal.begin(), signal.end(), fwd.input().begin());
      auto b = fwd.execute();
      source_bins.assign(b.begin(), b.end());
    }

    std::vector<double> filtered;
    for (std::size_t ch = 0; ch < m; ++ch) {
      const auto& path = paths[ch];
      double gain = 4.0 * kPi * path.amplitude * std::sqrt(src.directivity(sensors[ch]));
      const double* s = signal.data();
      if (scene.medium.absorption) {
        if (tone) {
          gain *= absorption_factor(src.spectrum.frequency, path.effective_distance, scene.medium);
        } else {
          InverseRealFft inv(len);
          auto bins = inv.input();
          for (std::size_t k = 0; k < bins.size(); ++k) {
            const double f = rate * static_cast<double>(k) / len;
            bins[k] = source_bins[k] * absorption_factor(f, path.effective_distance, scene.medium);
          }
          auto out = inv.execute();
          filtered.assign(out.begin(), out.end());
          for (auto& v : filtered) v /= static_cast<double>(len);
          s = filtered.data();
        }
      }
      // sample n of the output reads the source at index n + pre - delay * rate
      const double shift = static_cast<double>(pre) - path.delay * rate;
      const double base = std::floor(shift);
      const double mu = shift - base;
      const auto taps = detail::fractional_delay_taps(mu);
      const auto offset = static_cast<std::ptrdiff_t>(base) - detail::kDelayHalfTaps + 1;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = s + static_cast<std::ptrdiff_t>(i) + offset;
        double acc = 0;
        for (std::size_t k = 0; k < taps.size(); ++k) acc += taps[k] * p[k];
        ts.samples(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(i)) += gain * acc;
      }
    }
  }

  if (scene.noise) {
    const std::size_t len = n + n % 2;
    for (std::size_t ch = 0; ch < m; ++ch) {
      const auto noise = detail::shaped_noise(len, rate, *scene.noise, detail::mix_seed(scene.seed, 0x100000 + ch));
      for (std::size_t i = 0; i < n; ++i) ts.samples(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(i)) += noise[i];
    }
  }
  return ts;
}

/// Transfer vector of one source at one frequency, referenced to 1 m from the source.
inline Eigen::VectorXcd source_transfer(const Source& src, std::span<const Vec3> sensors,
                                        std::span<const PathResult> paths, double frequency,
                                        const MediumModel& medium) {
  Eigen::VectorXcd g(static_cast<Eigen::Index>(sensors.size()));
  for (std::size_t m = 0; m < sensors.size(); ++m) {
    const double mag = 4.0 * kPi * paths[m].amplitude * std::sqrt(src.directivity(sensors[m])) *
                       absorption_factor(frequency, paths[m].effective_distance, medium);
    g[static_cast<Eigen::Index>(m)] = std::polar(mag, -2.0 * kPi * frequency * paths[m].delay);
  }
  return g;
}

/// Exact CSM: C(f) = sum_s q_s^2(f) g_s g_s^H + diag(noise), Hermitian by construction.
inline CsmSet synthesize_csm(const Scene& scene, std::span<const Vec3> sensors, std::span<const double> frequencies) {
  scene.validate();
  const auto m = static_cast<Eigen::Index>(sensors.size());
  std::vector<std::vector<PathResult>> paths(scene.sources.size());
  for (std::size_t s = 0; s < scene.sources.size(); ++s)
    for (const auto& r : sensors) paths[s].push_back(propagate(scene.sources[s].position, r, scene.medium, scene.use_amiet));

  CsmSet out;
  out.reserve(frequencies.size());
  for (double f : frequencies) {
    if (!(f > 0)) throw DomainError("synthesize_csm: frequencies must be > 0");
    CrossSpectralMatrix c;
    c.frequency = f;
    c.values = Eigen::MatrixXcd::Zero(m, m);
    for (std::size_t s = 0; s < scene.sources.size(); ++s) {
      const double q2 = scene.sources[s].spectrum.psd(f);
      if (q2 == 0) continue;
      const auto g = source_transfer(scene.sources[s], sensors, paths[s], f, scene.medium);
      c.values.selfadjointView<Eigen::Upper>().rankUpdate(g, q2);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < j; ++i) c.values(j, i) = std::conj(c.values(i, j));
      double d = c.values(j, j).real();
      if (scene.noise) d += scene.noise->psd(f);
      c.values(j, j) = Complex(d, 0.0);
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace siam
