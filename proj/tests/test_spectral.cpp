#include "siam/spectral.hpp"
#include "siam/spectral_io.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>
#include <sstream>

using namespace siam;

namespace {

TimeSeries white_noise(std::size_t channels, std::size_t n, std::uint64_t seed, double rate = 48000) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  TimeSeries ts;
  ts.rate = rate;
  ts.samples.resize(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(n));
  for (Eigen::Index c = 0; c < ts.samples.rows(); ++c)
    for (Eigen::Index i = 0; i < ts.samples.cols(); ++i) ts.samples(c, i) = g(rng);
  return ts;
}

double integrated_power(const CsmSet& set, std::size_t ch) {
  const double df = set[1].frequency - set[0].frequency;
  double sum = 0;
  for (const auto& c : set) sum += c.values(ch, ch).real() * df;
  return sum;
}

}  // namespace

TEST(Welch, AverageCount) {
  EXPECT_EQ(welch_average_count(48000, 1024, 0.5), 92u);
  EXPECT_EQ(welch_average_count(1024, 1024, 0.5), 1u);
  EXPECT_EQ(welch_average_count(1000, 1024, 0.5), 0u);
  const auto set = welch_csm(white_noise(1, 48000, 1));
  EXPECT_EQ(set.size(), 513u);
  EXPECT_EQ(set[0].n_averages, 92u);
  EXPECT_DOUBLE_EQ(set[512].frequency, 24000.0);
  EXPECT_EQ(set[3].window, "hann");
}

TEST(Welch, ParsevalOnWhiteNoise) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto ts = white_noise(1, 48000, seed);
    const double var = (ts.samples.row(0).array() - ts.samples.row(0).mean()).square().mean();
    const auto set = welch_csm(ts);
    EXPECT_NEAR(integrated_power(set, 0), 1.0, 0.05);
    EXPECT_NEAR(integrated_power(set, 0), var, 0.05 * var);
  }
}

TEST(Welch, DuplicatedChannelFullyCoherent) {
  auto ts = white_noise(1, 20000, 4);
  ts.samples.conservativeResize(2, Eigen::NoChange);
  ts.samples.row(1) = ts.samples.row(0);
  const auto set = welch_csm(ts);
  for (std::size_t k = 1; k < set.size(); ++k) EXPECT_NEAR(coherence(set[k], 0, 1), 1.0, 1e-12) << k;
}

TEST(Welch, HermitianAndPositiveSemidefinite) {
  auto ts = white_noise(6, 12000, 5);
  ts.samples.row(3) += 0.7 * ts.samples.row(1);
  for (const auto& c : welch_csm(ts, {256, 0.5, Window::hann})) {
    EXPECT_EQ((c.values - c.values.adjoint()).cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index i = 0; i < c.values.rows(); ++i) {
      EXPECT_EQ(c.values(i, i).imag(), 0.0);
      EXPECT_GE(c.values(i, i).real(), 0.0);
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(c.values);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * c.values.trace().real());
  }
}

TEST(Welch, CrossSpectrumScatterShrinksWithAveraging) {
  // independent channels: the cross-spectrum estimate is pure estimation noise
  auto scatter = [](std::size_t n) {
    const auto set = welch_csm(white_noise(2, n, 6));
    const double expected_psd = 2.0 / 48000;
    double acc = 0;
    std::size_t count = 0;
    for (std::size_t k = 5; k + 5 < set.size(); ++k, ++count) acc += std::norm(set[k].values(0, 1) / expected_psd);
    return std::sqrt(acc / static_cast<double>(count));
  };
  const double ratio = scatter(48000) / scatter(96000);
  EXPECT_NEAR(ratio, std::sqrt(2.0), 0.2 * std::sqrt(2.0));
}

TEST(Welch, WindowNormalizationOnBinCenteredSine) {
  TimeSeries ts;
  ts.rate = 48000;
  ts.samples.resize(1, 48000);
  const double fc = 48000.0 * 85 / 1024;  // bin center
  for (Eigen::Index i = 0; i < ts.samples.cols(); ++i) ts.samples(0, i) = std::sin(2 * kPi * fc * i / 48000.0);
  const double hann = integrated_power(welch_csm(ts, {1024, 0.5, Window::hann}), 0);
  const double rect = integrated_power(welch_csm(ts, {1024, 0.5, Window::rectangular}), 0);
  EXPECT_NEAR(10 * std::log10(hann / rect), 0.0, 0.2);
  EXPECT_NEAR(rect, 0.5, 0.5 * 0.02);
}

TEST(Welch, Preconditions) {
  EXPECT_THROW(welch_csm(white_noise(1, 1000, 1)), DomainError);
  EXPECT_THROW(welch_csm(white_noise(1, 4000, 1), {1024, 1.0, Window::hann}), DomainError);
  EXPECT_THROW(welch_csm(white_noise(1, 4000, 1), {1024, -0.1, Window::hann}), DomainError);
  EXPECT_THROW(window_from_string("triangle"), DomainError);
}

TEST(CsmStats, IdenticalChannelsHaveZeroSpread) {
  CrossSpectralMatrix c;
  c.values = Eigen::MatrixXcd::Constant(4, 4, Complex(2.0, 0.0));
  const auto s = csm_stats(c);
  EXPECT_DOUBLE_EQ(s.auto_mean, 2.0);
  EXPECT_EQ(s.auto_std, 0.0);
  EXPECT_EQ(s.cross_std, 0.0);
  EXPECT_DOUBLE_EQ(s.cross_max, 2.0);
}

TEST(CsmStats, DiagonalOnly) {
  CrossSpectralMatrix c;
  c.values = Eigen::MatrixXcd::Zero(3, 3);
  c.values.diagonal() << 1.0, 2.0, 3.0;
  const auto s = csm_stats(c);
  EXPECT_DOUBLE_EQ(s.auto_mean, 2.0);
  EXPECT_DOUBLE_EQ(s.auto_std, std::sqrt(2.0 / 3.0));
  EXPECT_DOUBLE_EQ(s.auto_min, 1.0);
  EXPECT_DOUBLE_EQ(s.auto_max, 3.0);
  EXPECT_EQ(s.cross_mean, 0.0);
  EXPECT_EQ(s.cross_max, 0.0);
  EXPECT_EQ(power_to_db(s.cross_mean), -300.0);
}

TEST(CsmStats, NeedsTwoChannels) {
  CrossSpectralMatrix c;
  c.values = Eigen::MatrixXcd::Ones(1, 1);
  EXPECT_THROW(csm_stats(c), DomainError);
}

TEST(Bands, ThirdOctaveEdgesAt4k) {
  const double e = band_half_width_factor(BandType::third_octave);
  EXPECT_NEAR(4000 / e, 3563.6, 0.05);
  EXPECT_NEAR(4000 * e, 4489.8, 0.05);
  const auto centers = band_centers(BandType::third_octave, 900, 1300);
  ASSERT_FALSE(centers.empty());
  EXPECT_NE(std::find(centers.begin(), centers.end(), 1000.0), centers.end());
  EXPECT_THROW(band_half_width_factor(BandType::narrowband), DomainError);
}

TEST(Bands, FlatPsdGivesBandwidthTimesLevel) {
  Spectrum s;
  const double p0 = 3e-4;
  for (int f = 0; f <= 24000; ++f) {
    s.frequencies.push_back(f);
    s.values.push_back(p0);
  }
  for (auto type : {BandType::third_octave, BandType::octave}) {
    const auto b = band_integrate(s, type);
    const double e = band_half_width_factor(type);
    for (std::size_t i = 0; i < b.size(); ++i) {
      // bands narrower than a few bins have no bins or a poor bin count
      if (b.frequencies[i] * e > 24000 || b.frequencies[i] * (e - 1 / e) < 4) continue;
      const double width = b.frequencies[i] * (e - 1 / e);
      EXPECT_NEAR(b.values[i], p0 * width, p0 * 1.0001) << b.frequencies[i];
    }
  }
}

TEST(Bands, ToneFallsInOneBand) {
  Spectrum s;
  for (int k = 0; k <= 512; ++k) {
    s.frequencies.push_back(48000.0 * k / 1024);
    s.values.push_back(0.0);
  }
  const std::size_t tone_bin = 85;  // 3984 Hz
  s.values[tone_bin] = 2.0;
  const auto b = band_integrate(s, BandType::third_octave);
  double total = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (is_masked(b.values[i])) continue;
    total += b.values[i];
    if (std::abs(b.frequencies[i] - 4000) < 1)
      EXPECT_DOUBLE_EQ(b.values[i], 2.0 * 46.875);
    else
      EXPECT_EQ(b.values[i], 0.0) << b.frequencies[i];
  }
  EXPECT_DOUBLE_EQ(total, 2.0 * 46.875);
}

TEST(Bands, EmptyBandIsMaskedNotZero) {
  Spectrum s;
  s.frequencies = {1000, 4000};
  s.values = {1.0, 1.0};
  const auto b = band_integrate(s, BandType::third_octave);
  bool saw_masked = false;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (std::abs(b.frequencies[i] - 2000) < 1) {
      EXPECT_TRUE(is_masked(b.values[i]));
      saw_masked = true;
    }
  EXPECT_TRUE(saw_masked);
  Spectrum banded = b;
  EXPECT_THROW(band_integrate(banded, BandType::octave), DomainError);
}

TEST(CsmFile, RoundTrip) {
  auto ts = white_noise(5, 4096, 9);
  const auto set = welch_csm(ts, {512, 0.5, Window::hann});
  CsmFileInfo info;
  info.geometry_hash = 1234;
  info.channels = {4, 8, 15, 16, 23};
  const auto bytes = encode_csm_file(set, info);
  // magic, length, header, then 5*6/2 complex values per bin
  EXPECT_EQ(bytes.substr(0, 8), "SIAMCSM1");
  CsmFileInfo back_info;
  const auto back = decode_csm_file(bytes, &back_info);
  ASSERT_EQ(back.size(), set.size());
  for (std::size_t k = 0; k < set.size(); ++k) {
    EXPECT_EQ(back[k].values, set[k].values);
    EXPECT_EQ(back[k].frequency, set[k].frequency);
    EXPECT_EQ(back[k].n_averages, set[k].n_averages);
  }
  EXPECT_EQ(back_info.geometry_hash, 1234u);
  EXPECT_EQ(back_info.channels, info.channels);
  EXPECT_EQ(encode_csm_file(back, back_info), bytes);
}

TEST(CsmFile, CorruptionDetected) {
  const auto set = welch_csm(white_noise(2, 2048, 9), {256, 0.5, Window::hann});
  auto bytes = encode_csm_file(set);
  bytes.back() ^= 0x01;
  EXPECT_THROW(decode_csm_file(bytes), SchemaError);
  bytes = encode_csm_file(set);
  bytes.pop_back();
  EXPECT_THROW(decode_csm_file(bytes), SchemaError);
  EXPECT_THROW(decode_csm_file("not a csm file at all"), SchemaError);
}

TEST(SpectrumCsv, MaskedValuesEmpty) {
  Spectrum s;
  s.frequencies = {100, 200};
  s.values = {4e-8, kMasked};
  std::ostringstream os;
  write_spectrum_csv(os, s);
  EXPECT_EQ(os.str(), "frequency_hz,psd_db\n100,20\n200,\n");
}
