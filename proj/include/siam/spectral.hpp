#pragma once

// Cross-spectral matrix estimation (Welch), CSM statistics and fractional-octave band integration.

#include "siam/error.hpp"
#include "siam/fft.hpp"
#include "siam/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace siam {

enum class Window { hann, rectangular };

inline std::string to_string(Window w) { return w == Window::hann ? "hann" : "rectangular"; }

inline Window window_from_string(const std::string& s) {
  if (s == "hann" || s == "hanning") return Window::hann;
  if (s == "rectangular" || s == "boxcar") return Window::rectangular;
  throw DomainError("unknown window '" + s + "'");
}

/// Periodic window of length n.
inline std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::hann)
    for (std::size_t i = 0; i < n; ++i) out[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) / n));
  return out;
}

/// Multichannel signal; one row per channel.
struct TimeSeries {
  double rate = 48000.0;
  Eigen::MatrixXd samples;
  std::vector<std::string> warnings;

  std::size_t channels() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t length() const { return static_cast<std::size_t>(samples.cols()); }
};

struct CrossSpectralMatrix {
  double frequency = 0.0;
  Eigen::MatrixXcd values;  // Pa^2/Hz, one-sided
  std::size_t n_averages = 0;
  std::string window = "exact";
  std::size_t block_size = 0;
  double overlap = 0.0;

  std::size_t channels() const { return static_cast<std::size_t>(values.rows()); }
};

using CsmSet = std::vector<CrossSpectralMatrix>;

struct WelchParams {
  std::size_t block = 1024;
  double overlap = 0.5;
  Window window = Window::hann;
};

inline std::size_t welch_hop(std::size_t block, double overlap) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(block * (1.0 - overlap))));
}

inline std::size_t welch_average_count(std::size_t n, std::size_t block, double overlap) {
  if (n < block) return 0;
  return (n - block) / welch_hop(block, overlap) + 1;
}

/// Welch CSM estimate, one matrix per FFT bin from DC to Nyquist.
/// Each channel's mean over the full record is removed first; blocks are not detrended.
inline CsmSet welch_csm(const TimeSeries& ts, const WelchParams& p = {}) {
  const std::size_t n = ts.length();
  const std::size_t m = ts.channels();
  if (p.block < 2) throw DomainError("welch_csm: block must be >= 2");
  if (!(p.overlap >= 0 && p.overlap < 1)) throw DomainError("welch_csm: overlap must be in [0, 1)");
  if (n < p.block) throw DomainError("welch_csm: signal shorter than one block");
  if (m == 0) throw DomainError("welch_csm: no channels");

  const std::size_t hop = welch_hop(p.block, p.overlap);
  const std::size_t blocks = welch_average_count(n, p.block, p.overlap);
  const std::size_t bins = p.block / 2 + 1;
  const auto win = make_window(p.window, p.block);
  double win_power = 0;
  for (double w : win) win_power += w * w;

  Eigen::VectorXd means = ts.samples.rowwise().mean();
  std::vector<Eigen::MatrixXcd> acc(bins, Eigen::MatrixXcd::Zero(m, m));

  constexpr std::size_t kChunk = 16;
  RealFft fft(p.block);
  std::vector<Eigen::MatrixXcd> chunk(bins);
  for (std::size_t b0 = 0; b0 < blocks; b0 += kChunk) {
    const std::size_t nb = std::min(kChunk, blocks - b0);
    for (auto& c : chunk) c.resize(m, nb);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t start = (b0 + b) * hop;
      for (std::size_t ch = 0; ch < m; ++ch) {
        auto in = fft.input();
        for (std::size_t i = 0; i < p.block; ++i) in[i] = (ts.samples(ch, start + i) - means[ch]) * win[i];
        auto spec = fft.execute();
        for (std::size_t k = 0; k < bins; ++k) chunk[k](ch, b) = spec[k];
      }
    }
    for (std::size_t k = 0; k < bins; ++k) acc[k].selfadjointView<Eigen::Upper>().rankUpdate(chunk[k]);
  }

  CsmSet out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = (k == 0) || (p.block % 2 == 0 && k == bins - 1);
    const double scale = (edge ? 1.0 : 2.0) / (ts.rate * win_power * static_cast<double>(blocks));
    auto& c = out[k];
    c.frequency = ts.rate * static_cast<double>(k) / p.block;
    c.values = Eigen::MatrixXcd(m, m);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        c.values(i, j) = acc[k](i, j) * scale;
        c.values(j, i) = std::conj(c.values(i, j));
      }
      c.values(j, j) = Complex(acc[k](j, j).real() * scale, 0.0);
    }
    c.n_averages = blocks;
    c.window = to_string(p.window);
    c.block_size = p.block;
    c.overlap = p.overlap;
  }
  return out;
}

/// Restrict a CSM to a subset of its channels.
inline CrossSpectralMatrix select_channels(const CrossSpectralMatrix& c, std::span<const std::size_t> idx) {
  CrossSpectralMatrix out = c;
  out.values.resize(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out.values(i, j) = c.values(idx[i], idx[j]);
  return out;
}

/// Magnitude-squared coherence between channels i and j.
inline double coherence(const CrossSpectralMatrix& c, std::size_t i, std::size_t j) {
  const double den = c.values(i, i).real() * c.values(j, j).real();
  return den > 0 ? std::norm(c.values(i, j)) / den : 0.0;
}

/// Per-frequency statistics over the auto-spectra (diagonal) and cross-spectra (upper triangle magnitudes).
struct CsmStats {
  double frequency = 0;
  double auto_mean = 0, auto_std = 0, auto_min = 0, auto_max = 0;
  double cross_mean = 0, cross_std = 0, cross_min = 0, cross_max = 0;
};

inline CsmStats csm_stats(const CrossSpectralMatrix& c) {
  const std::size_t m = c.channels();
  if (m < 2) throw DomainError("csm_stats: at least two channels required");
  auto summarize = [](const std::vector<double>& v, double& mean, double& sd, double& lo, double& hi) {
    mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    sd = std::sqrt(var / static_cast<double>(v.size()));
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = *mn;
    hi = *mx;
  };
  std::vector<double> autos(m), cross;
  cross.reserve(m * (m - 1) / 2);
  for (std::size_t i = 0; i < m; ++i) {
    autos[i] = c.values(i, i).real();
    for (std::size_t j = i + 1; j < m; ++j) cross.push_back(std::abs(c.values(i, j)));
  }
  CsmStats s;
  s.frequency = c.frequency;
  summarize(autos, s.auto_mean, s.auto_std, s.auto_min, s.auto_max);
  summarize(cross, s.cross_mean, s.cross_std, s.cross_min, s.cross_max);
  return s;
}

enum class BandType { narrowband, third_octave, octave };

inline std::string to_string(BandType b) {
  switch (b) {
    case BandType::third_octave: return "third_octave";
    case BandType::octave: return "octave";
    default: return "narrowband";
  }
}

/// Frequency axis plus values: PSD (Pa^2/Hz) for narrowband, band power (Pa^2) for bands.
/// Missing values are NaN.
struct Spectrum {
  std::vector<double> frequencies;
  std::vector<double> values;
  BandType band_type = BandType::narrowband;

  std::size_t size() const { return frequencies.size(); }
};

inline Spectrum autospectrum(const CsmSet& csms, std::size_t channel) {
  Spectrum s;
  for (const auto& c : csms) {
    s.frequencies.push_back(c.frequency);
    s.values.push_back(c.values(channel, channel).real());
  }
  return s;
}

/// Band-edge factor: 2^(1/6) for third octaves, 2^(1/2) for octaves.
inline double band_half_width_factor(BandType b) {
  if (b == BandType::third_octave) return std::pow(2.0, 1.0 / 6.0);
  if (b == BandType::octave) return std::sqrt(2.0);
  throw DomainError("band_half_width_factor: narrowband has no bands");
}

/// Base-2 band centers 1 kHz * 2^(k/3) or 1 kHz * 2^k covering [f_lo, f_hi].
inline std::vector<double> band_centers(BandType b, double f_lo, double f_hi) {
  const double step = b == BandType::third_octave ? 1.0 / 3.0 : 1.0;
  const double edge = band_half_width_factor(b);
  std::vector<double> out;
  if (!(f_hi > 0)) return out;
  f_lo = std::max(f_lo, 1e-3);
  const int k0 = static_cast<int>(std::floor(std::log2(f_lo / 1000.0) / step)) - 1;
  const int k1 = static_cast<int>(std::ceil(std::log2(f_hi / 1000.0) / step)) + 1;
  for (int k = k0; k <= k1; ++k) {
    const double fc = 1000.0 * std::pow(2.0, k * step);
    if (fc * edge > f_lo && fc / edge <= f_hi) out.push_back(fc);
  }
  return out;
}

/// Band power = sum of PSD * bin width over bins with f in [fc/edge, fc*edge). Bands without
/// bins are NaN. Masked input bins are skipped.
inline Spectrum band_integrate(const Spectrum& s, BandType bands) {
  if (s.band_type != BandType::narrowband) throw DomainError("band_integrate: input must be narrowband");
  if (bands == BandType::narrowband) return s;
  const std::size_t n = s.size();
  Spectrum out;
  out.band_type = bands;
  if (n == 0) return out;

  std::vector<double> width(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (n == 1) {
      width[i] = 1.0;
    } else if (i == 0) {
      width[i] = s.frequencies[1] - s.frequencies[0];
    } else if (i == n - 1) {
      width[i] = s.frequencies[n - 1] - s.frequencies[n - 2];
    } else {
      width[i] = (s.frequencies[i + 1] - s.frequencies[i - 1]) / 2;
    }
  }

  const double edge = band_half_width_factor(bands);
  double f_lo = s.frequencies.front();
  for (double f : s.frequencies)
    if (f > 0) {
      f_lo = f;
      break;
    }
  for (double fc : band_centers(bands, f_lo, s.frequencies.back())) {
    const double lo = fc / edge;
    const double hi = fc * edge;
    double sum = 0;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (s.frequencies[i] >= lo && s.frequencies[i] < hi && !is_masked(s.values[i])) {
        sum += s.values[i] * width[i];
        any = true;
      }
    }
    out.frequencies.push_back(fc);
    out.values.push_back(any ? sum : kMasked);
  }
  return out;
}

}  // namespace siam
