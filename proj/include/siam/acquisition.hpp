#pragma once

// Sensor-to-server chain: 1-bit delta-sigma PDM, four-stage decimation to 48 kHz PCM,
// and clock/data-rate arithmetic.

#include "siam/error.hpp"
#include "siam/fft.hpp"
#include "siam/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace siam {

inline constexpr double kPdmRate = 3'072'000.0;
inline constexpr int kDecimationFactor = 64;
inline constexpr double kPcmRate = kPdmRate / kDecimationFactor;
inline constexpr double kPcmFullScale = 2147483647.0;

/// Packed 1-bit stream, LSB first within each byte. A set bit is +1, a clear bit -1.
struct PdmStream {
  std::vector<std::uint8_t> bits;
  std::size_t length = 0;
  double rate = kPdmRate;
  int channel_id = 0;
  bool overload = false;  // input exceeded full scale and was clipped
  /// Signal delay of the modulator that produced the stream, in PDM samples.
  double modulator_delay = 0.0;

  bool bit(std::size_t i) const { return (bits[i >> 3] >> (i & 7)) & 1u; }

  void push(bool b) {
    if ((length & 7) == 0) bits.push_back(0);
    if (b) bits.back() |= static_cast<std::uint8_t>(1u << (length & 7));
    ++length;
  }

  void resize(std::size_t n) {
    length = n;
    bits.assign((n + 7) / 8, 0);
  }

  void set(std::size_t i, bool b) {
    if (b)
      bits[i >> 3] |= static_cast<std::uint8_t>(1u << (i & 7));
    else
      bits[i >> 3] &= static_cast<std::uint8_t>(~(1u << (i & 7)));
  }

  /// Bits as +-1 values.
  std::vector<double> bipolar() const {
    std::vector<double> out(length);
    for (std::size_t i = 0; i < length; ++i) out[i] = bit(i) ? 1.0 : -1.0;
    return out;
  }

  bool operator==(const PdmStream& o) const {
    if (length != o.length) return false;
    for (std::size_t i = 0; i < length; ++i)
      if (bit(i) != o.bit(i)) return false;
    return true;
  }
};

struct PcmBlock {
  std::vector<std::int32_t> samples;
  double rate = kPcmRate;
  double group_delay = 0.0;  // output samples, modulator plus decimation chain
  int channel_id = 0;

  /// Samples scaled back to the modulator's full-scale units (1.0 = full scale).
  std::vector<double> normalized() const {
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i] / kPcmFullScale;
    return out;
  }
};

/// Delta-sigma modulator with cascaded integrators and a single feedback path (CIFB).
/// Order 2 has noise transfer (1 - z^-1)^2 and a one-sample signal delay. Input is divided by
/// full_scale; values beyond it are clipped and flagged.
inline PdmStream pdm_modulate(std::span<const double> waveform, double full_scale, int order = 2,
                              int channel_id = 0) {
  if (!(full_scale > 0)) throw DomainError("pdm_modulate: full_scale must be > 0");
  if (order != 1 && order != 2) throw DomainError("pdm_modulate: order must be 1 or 2");
  PdmStream out;
  out.channel_id = channel_id;
  out.resize(waveform.size());
  out.modulator_delay = 1.0;
  double i1 = 0, i2 = 0;
  for (std::size_t n = 0; n < waveform.size(); ++n) {
    double x = waveform[n] / full_scale;
    if (x > 1.0 || x < -1.0) {
      out.overload = true;
      x = std::clamp(x, -1.0, 1.0);
    }
    const double state = order == 2 ? i2 : i1;
    const double y = state >= 0 ? 1.0 : -1.0;
    i1 += x - y;
    if (order == 2) i2 += i1 - y;
    if (y > 0) out.set(n, true);
  }
  return out;
}

/// One FIR decimation stage: y[j] = sum_i taps[i] x[R j - i], with x[n < 0] = 0.
struct FirStage {
  std::vector<double> taps;
  int factor = 1;

  std::vector<double> apply(std::span<const double> x) const {
    const std::size_t n_out = x.size() / static_cast<std::size_t>(factor);
    std::vector<double> y(n_out, 0.0);
    const std::size_t taps_n = taps.size();
    for (std::size_t j = 0; j < n_out; ++j) {
      const std::size_t pos = j * static_cast<std::size_t>(factor);
      const std::size_t count = std::min(taps_n, pos + 1);
      double acc = 0;
      for (std::size_t i = 0; i < count; ++i) acc += taps[i] * x[pos - i];
      y[j] = acc;
    }
    return y;
  }

  /// Response at frequency f for an input sampled at rate.
  Complex response(double f, double rate) const {
    Complex acc = 0;
    const double w = -2.0 * kPi * f / rate;
    for (std::size_t i = 0; i < taps.size(); ++i) acc += taps[i] * std::polar(1.0, w * static_cast<double>(i));
    return acc;
  }
};

namespace detail {

inline std::vector<double> kaiser_window(std::size_t n, double beta) {
  std::vector<double> w(n);
  const double denom = std::cyl_bessel_i(0.0, beta);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = n == 1 ? 0.0 : 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
    w[i] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
  }
  return w;
}

// CIC(R, order) as its equivalent FIR: boxcar of length R convolved order times, unit DC gain.
inline std::vector<double> cic_taps(int factor, int order) {
  std::vector<double> h{1.0};
  for (int k = 0; k < order; ++k) {
    std::vector<double> next(h.size() + static_cast<std::size_t>(factor) - 1, 0.0);
    for (std::size_t i = 0; i < h.size(); ++i)
      for (int r = 0; r < factor; ++r) next[i + static_cast<std::size_t>(r)] += h[i];
    h = std::move(next);
  }
  const double gain = std::pow(static_cast<double>(factor), order);
  for (auto& v : h) v /= gain;
  return h;
}

// Kaiser-windowed half-band low-pass (cutoff at a quarter of the input rate), unit DC gain.
inline std::vector<double> halfband_taps(std::size_t length, double beta) {
  const auto w = kaiser_window(length, beta);
  const double c = static_cast<double>(length - 1) / 2.0;
  std::vector<double> h(length);
  double sum = 0;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) - c;
    h[i] = (t == 0 ? 0.5 : std::sin(kPi * t / 2.0) / (kPi * t)) * w[i];
    sum += h[i];
  }
  for (auto& v : h) v /= sum;
  return h;
}

}  // namespace detail

struct DecimationDesign {
  int cic_order = 5;
  std::size_t halfband1_length = 23;
  double halfband1_beta = 9.0;
  std::size_t halfband2_length = 79;
  double halfband2_beta = 8.6;
  std::size_t compensator_length = 31;
  double passband_edge = 20000.0;
};

/// CIC (R=16) -> half-band (R=2) -> half-band (R=2) -> droop compensator (R=1).
/// All stages are linear phase, so the chain has a constant group delay.
class DecimationChain {
 public:
  explicit DecimationChain(const DecimationDesign& d = {}) : design_(d) {
    stages_[0] = {detail::cic_taps(16, d.cic_order), 16};
    stages_[1] = {detail::halfband_taps(d.halfband1_length, d.halfband1_beta), 2};
    stages_[2] = {detail::halfband_taps(d.halfband2_length, d.halfband2_beta), 2};
    stages_[3] = {design_compensator(), 1};
  }

  const FirStage& stage(std::size_t k) const { return stages_.at(k); }
  static constexpr std::size_t stage_count() { return 4; }

  /// Input rate of stage k.
  static double stage_rate(std::size_t k) {
    constexpr double rates[] = {kPdmRate, kPdmRate / 16, kPdmRate / 32, kPdmRate / 64};
    return rates[k];
  }

  /// Complex response at input frequency f (Hz, at the PDM rate).
  Complex response(double f) const {
    Complex h = 1.0;
    for (std::size_t k = 0; k < 4; ++k) h *= stages_[k].response(f, stage_rate(k));
    return h;
  }

  /// Constant group delay in output samples.
  double group_delay() const {
    double d = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double in_samples = static_cast<double>(stages_[k].taps.size() - 1) / 2.0;
      d += in_samples * stage_rate(3) / stage_rate(k);
    }
    return d;
  }

  /// Length of the overall impulse response in input samples.
  std::size_t warmup() const {
    std::size_t n = 0, scale = 1;
    for (std::size_t k = 0; k < 4; ++k) {
      n += (stages_[k].taps.size() - 1) * scale;
      scale *= static_cast<std::size_t>(stages_[k].factor);
    }
    return n + 1;
  }

  /// Runs the linear chain on arbitrary real input at the PDM rate.
  std::vector<double> process(std::span<const double> x) const {
    if (x.size() < warmup())
      throw DomainError("decimate: stream of " + std::to_string(x.size()) + " samples is shorter than the " +
                        std::to_string(warmup()) + "-sample warm-up");
    std::vector<double> y(x.begin(), x.end());
    for (const auto& s : stages_) y = s.apply(y);
    return y;
  }

 private:
  // Least-squares symmetric FIR at the output rate that flattens the first three stages over
  // [0, passband_edge].
  std::vector<double> design_compensator() const {
    const std::size_t len = design_.compensator_length;
    const std::size_t half = (len - 1) / 2;
    constexpr int kGrid = 400;
    Eigen::MatrixXd a(kGrid + 1, half + 1);
    Eigen::VectorXd b(kGrid + 1);
    for (int g = 0; g <= kGrid; ++g) {
      const double f = design_.passband_edge * g / kGrid;
      Complex prev = 1.0;
      for (std::size_t k = 0; k < 3; ++k) prev *= stages_[k].response(f, stage_rate(k));
      b[g] = 1.0 / std::abs(prev);
      a(g, 0) = 1.0;
      for (std::size_t m = 1; m <= half; ++m)
        a(g, static_cast<Eigen::Index>(m)) = 2.0 * std::cos(2.0 * kPi * f * static_cast<double>(m) / kPcmRate);
    }
    const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
    std::vector<double> h(len);
    for (std::size_t m = 0; m <= half; ++m) h[half + m] = h[half - m] = c[static_cast<Eigen::Index>(m)];
    return h;
  }

  DecimationDesign design_;
  std::array<FirStage, 4> stages_;
};

inline const DecimationChain& default_decimation_chain() {
  static const DecimationChain chain;
  return chain;
}

/// Saturating conversion of full-scale-normalized values to 32-bit PCM.
inline std::int32_t to_pcm32(double v) {
  const double s = std::round(v * kPcmFullScale);
  if (s >= kPcmFullScale) return std::numeric_limits<std::int32_t>::max();
  if (s <= -kPcmFullScale - 1) return std::numeric_limits<std::int32_t>::min();
  return static_cast<std::int32_t>(s);
}

/// PDM at 3.072 MHz to 32-bit PCM at 48 kHz; 64 input bits per output sample.
inline PcmBlock pdm_decimate(const PdmStream& stream, const DecimationChain& chain = default_decimation_chain()) {
  if (stream.rate != kPdmRate) throw DomainError("pdm_decimate: stream rate must be 3.072 MHz");
  const auto y = chain.process(stream.bipolar());
  PcmBlock out;
  out.channel_id = stream.channel_id;
  out.group_delay = chain.group_delay() + stream.modulator_delay / kDecimationFactor;
  out.samples.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out.samples[i] = to_pcm32(y[i]);
  return out;
}

/// Band-limited 64x interpolation of a 48 kHz record to the PDM rate (circular FFT zero padding).
inline std::vector<double> upsample_to_pdm_rate(std::span<const double> pcm) {
  const std::size_t n = pcm.size();
  if (n < 2) throw DomainError("upsample_to_pdm_rate: need at least two samples");
  const std::size_t m = n * kDecimationFactor;
  RealFft fwd(n);
  std::copy(pcm.begin(), pcm.end(), fwd.input().begin());
  const auto spec = fwd.execute();
  InverseRealFft inv(m);
  auto in = inv.input();
  std::fill(in.begin(), in.end(), Complex(0.0));
  const std::size_t bins = n / 2 + 1;
  for (std::size_t k = 0; k < bins; ++k) in[k] = spec[k];
  if (n % 2 == 0) in[n / 2] *= 0.5;  // split the Nyquist bin between +-fs/2
  const auto out = inv.execute();
  std::vector<double> y(out.begin(), out.end());
  for (auto& v : y) v /= static_cast<double>(n);
  return y;
}

/// Continuous stream rate in Mbit/s.
inline double stream_data_rate(int channels, double pdm_rate, double overhead_fraction) {
  if (channels < 1) throw DomainError("stream_data_rate: channels must be >= 1");
  return channels * pdm_rate * (1.0 + overhead_fraction) / 1e6;
}

/// Phase difference in degrees caused by a clock skew at a given frequency.
inline double phase_skew_budget(double skew, double frequency) {
  if (skew < 0) throw DomainError("phase_skew_budget: skew must be >= 0");
  return 360.0 * skew * frequency;
}

}  // namespace siam
