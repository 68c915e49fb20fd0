#include "oracles.hpp"
#include "siam/acquisition.hpp"
#include "siam/packet.hpp"
#include "siam/pcm_io.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace siam;

namespace {

std::vector<double> pdm_sine(double amplitude, double frequency, std::size_t n, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amplitude * std::cos(2 * kPi * frequency * static_cast<double>(i) / kPdmRate + phase);
  return x;
}

// Output samples after the chain has filled, as full-scale-normalized values.
std::vector<double> settled(const PcmBlock& pcm) {
  const auto y = pcm.normalized();
  const std::size_t skip = default_decimation_chain().warmup() / kDecimationFactor + 1;
  return {y.begin() + static_cast<std::ptrdiff_t>(skip), y.end()};
}

double skip_time() {
  return static_cast<double>(default_decimation_chain().warmup() / kDecimationFactor + 1) / kPcmRate;
}

double db(double ratio) { return 20 * std::log10(ratio); }

std::vector<PdmStream> random_streams(std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(0.5);
  std::vector<PdmStream> s(kChannelsPerPacket);
  for (std::size_t ch = 0; ch < s.size(); ++ch) {
    s[ch].channel_id = static_cast<int>(ch);
    s[ch].resize(length);
    for (std::size_t i = 0; i < length; ++i) s[ch].set(i, b(rng));
  }
  return s;
}

bool same_bits(const PdmStream& a, const PdmStream& b) {
  if (a.length != b.length) return false;
  for (std::size_t i = 0; i < a.length; ++i)
    if (a.bit(i) != b.bit(i)) return false;
  return true;
}

}  // namespace

TEST(Modulator, ZeroInputHasZeroMean) {
  const std::vector<double> x(307200, 0.0);
  const auto s = pdm_modulate(x, 1.0);
  EXPECT_EQ(s.length, x.size());
  const auto v = s.bipolar();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  EXPECT_NEAR(mean, 0.0, 1e-3);
  EXPECT_FALSE(s.overload);
}

TEST(Modulator, FullScaleDcDecodesToFullScale) {
  const std::vector<double> x(200000, 2.5);
  const auto s = pdm_modulate(x, 2.5);
  const auto v = s.bipolar();
  const double density = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  EXPECT_NEAR(db(density), 0.0, 0.1);
  const auto y = settled(pdm_decimate(s));
  const double decoded = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  EXPECT_NEAR(db(decoded), 0.0, 0.1);
  EXPECT_FALSE(s.overload);
}

TEST(Modulator, SinadAtMinusSixDbfs) {
  const double a = std::pow(10.0, -6.0 / 20);
  const auto pcm = pdm_decimate(pdm_modulate(pdm_sine(a, 1000, 3'072'000), 1.0));
  const auto fit = oracle::fit_sine(settled(pcm), 1000, kPcmRate);
  EXPECT_GE(fit.sinad_db(), 60.0);
  EXPECT_NEAR(db(fit.amplitude / a), 0.0, 0.1);
}

TEST(Modulator, OverloadIsClippedAndFlagged) {
  const auto s = pdm_modulate(pdm_sine(1.5, 1000, 10000), 1.0);
  EXPECT_TRUE(s.overload);
  EXPECT_FALSE(pdm_modulate(pdm_sine(0.5, 1000, 10000), 1.0).overload);
  EXPECT_THROW(pdm_modulate(pdm_sine(0.5, 1000, 100), 0.0), DomainError);
  EXPECT_THROW(pdm_modulate(pdm_sine(0.5, 1000, 100), 1.0, 3), DomainError);
}

TEST(Modulator, NoiseShapingMovesNoiseOutOfBand) {
  const double a = std::pow(10.0, -20.0 / 20);
  const std::size_t n = 1 << 20;
  const auto x = pdm_sine(a, 1000, n);
  const auto s = pdm_modulate(x, 1.0);
  const auto v = s.bipolar();

  // out-of-band noise before decimation: quantisation error above 20 kHz
  RealFft fft(n);
  for (std::size_t i = 0; i < n; ++i) fft.input()[i] = v[i] - (i >= 1 ? x[i - 1] : 0.0);
  const auto spec = fft.execute();
  const double df = kPdmRate / static_cast<double>(n);
  double out_of_band = 0;
  for (std::size_t k = 0; k < spec.size(); ++k)
    if (static_cast<double>(k) * df > 20000) out_of_band += std::norm(spec[k]);
  out_of_band *= 2.0 / (static_cast<double>(n) * static_cast<double>(n));

  // in-band noise after decimation: everything but the tone
  const auto fit = oracle::fit_sine(settled(pdm_decimate(s)), 1000, kPcmRate);
  EXPECT_GE(10 * std::log10(out_of_band / fit.residual_power), 40.0);
}

TEST(Decimation, OneSecondGivesFortyEightThousandSamples) {
  PdmStream s;
  s.resize(3'072'000);
  for (std::size_t i = 0; i < s.length; i += 2) s.set(i, true);
  const auto pcm = pdm_decimate(s);
  EXPECT_EQ(pcm.samples.size(), 48000u);
  EXPECT_DOUBLE_EQ(pcm.rate, 48000.0);
  EXPECT_DOUBLE_EQ(pcm.rate, s.rate / kDecimationFactor);
}

TEST(Decimation, StageFactorsMultiplyToSixtyFour) {
  const auto& c = default_decimation_chain();
  int total = 1;
  for (std::size_t k = 0; k < DecimationChain::stage_count(); ++k) total *= c.stage(k).factor;
  EXPECT_EQ(total, 64);
  EXPECT_EQ(c.stage(0).factor, 16);
  EXPECT_EQ(c.stage(3).factor, 1);
}

TEST(Decimation, AmplitudeAfterGroupDelayAlignment) {
  const auto pcm = pdm_decimate(pdm_modulate(pdm_sine(0.5, 1000, 614400), 1.0));
  const auto y = settled(pcm);
  // shift the fit's time axis by the group delay: the phase must then be that of the input
  const double t0 = skip_time() - pcm.group_delay / kPcmRate;
  const auto fit = oracle::fit_sine(y, 1000, kPcmRate, t0);
  EXPECT_NEAR(db(fit.amplitude / 0.5), 0.0, 0.1);
  EXPECT_NEAR(fit.phase, 0.0, 1e-3);
}

TEST(Decimation, LatencyEqualsDocumentedGroupDelay) {
  // delay measured from the phase of a sine at several frequencies
  for (double f : {300.0, 1000.0, 5000.0, 15000.0}) {
    const auto pcm = pdm_decimate(pdm_modulate(pdm_sine(0.25, f, 614400), 1.0));
    const auto fit = oracle::fit_sine(settled(pcm), f, kPcmRate, skip_time());
    double delay_s = -fit.phase / (2 * kPi * f);
    const double period = 1.0 / f;
    const double expected_s = pcm.group_delay / kPcmRate;
    delay_s += std::round((expected_s - delay_s) / period) * period;
    EXPECT_NEAR(delay_s * kPcmRate, pcm.group_delay, 2e-3) << f;
  }
  // the linear chain alone has exactly its own group delay
  const auto& chain = default_decimation_chain();
  const auto y = chain.process(pdm_sine(0.25, 100, 614400));
  const std::size_t skip = chain.warmup() / kDecimationFactor + 1;
  const auto fit = oracle::fit_sine(std::span(y).subspan(skip), 100, kPcmRate, static_cast<double>(skip) / kPcmRate);
  EXPECT_NEAR(-fit.phase / (2 * kPi * 100) * kPcmRate, chain.group_delay(), 1e-6);
}

TEST(Decimation, DeterministicOutput) {
  const auto x = pdm_sine(0.3, 2000, 100000);
  const auto a = pdm_decimate(pdm_modulate(x, 1.0));
  const auto b = pdm_decimate(pdm_modulate(x, 1.0));
  EXPECT_EQ(a.samples, b.samples);
}

TEST(Decimation, LinearOverSixtyDecibels) {
  const auto reference = [](double level_db) {
    const double a = std::pow(10.0, level_db / 20);
    const auto pcm = pdm_decimate(pdm_modulate(pdm_sine(a, 1000, 614400), 1.0));
    return oracle::fit_sine(settled(pcm), 1000, kPcmRate).amplitude / a;
  };
  const double g0 = reference(-6);
  for (double level : {-60.0, -50.0, -40.0, -30.0, -20.0, -10.0, -3.0, 0.0})
    EXPECT_NEAR(db(reference(level) / g0), 0.0, 0.05) << level;
}

TEST(Decimation, PassbandRipple) {
  const auto& chain = default_decimation_chain();
  for (double f = 0; f <= 20000; f += 50) EXPECT_NEAR(db(std::abs(chain.response(f))), 0.0, 0.1) << f;
}

TEST(Decimation, StopbandRejection) {
  // anything at or above 28 kHz that folds into 0..20 kHz at the output rate
  const auto& chain = default_decimation_chain();
  for (double f = 28000; f <= kPdmRate / 2; f += 250) {
    const double folded = std::abs(f - kPcmRate * std::round(f / kPcmRate));
    if (folded > 20000) continue;
    EXPECT_LE(db(std::abs(chain.response(f))), -80.0) << f;
  }
}

TEST(Decimation, AliasMeasuredInTimeDomain) {
  // a 30 kHz tone would fold to 18 kHz
  const auto& chain = default_decimation_chain();
  const auto y = chain.process(pdm_sine(1.0, 30000, 614400));
  const std::size_t skip = chain.warmup() / kDecimationFactor + 1;
  const auto fit = oracle::fit_sine(std::span(y).subspan(skip), 18000, kPcmRate);
  EXPECT_LE(db(fit.amplitude), -80.0);
}

TEST(Decimation, ShortStreamRejected) {
  PdmStream s;
  s.resize(default_decimation_chain().warmup() - 1);
  EXPECT_THROW(pdm_decimate(s), DomainError);
  s.resize(default_decimation_chain().warmup());
  EXPECT_NO_THROW(pdm_decimate(s));
  s.rate = 1e6;
  EXPECT_THROW(pdm_decimate(s), DomainError);
}

TEST(Decimation, PcmSaturates) {
  EXPECT_EQ(to_pcm32(1.0), std::numeric_limits<std::int32_t>::max());
  EXPECT_EQ(to_pcm32(2.0), std::numeric_limits<std::int32_t>::max());
  EXPECT_EQ(to_pcm32(-2.0), std::numeric_limits<std::int32_t>::min());
  EXPECT_EQ(to_pcm32(0.0), 0);
}

TEST(Upsample, ReproducesBandLimitedSignal) {
  std::vector<double> pcm(480);
  for (std::size_t i = 0; i < pcm.size(); ++i) pcm[i] = std::cos(2 * kPi * 1000 * static_cast<double>(i) / kPcmRate);
  const auto up = upsample_to_pdm_rate(pcm);
  ASSERT_EQ(up.size(), pcm.size() * 64);
  for (std::size_t i = 0; i < up.size(); i += 37)
    EXPECT_NEAR(up[i], std::cos(2 * kPi * 1000 * static_cast<double>(i) / kPdmRate), 1e-9);
}

TEST(Packets, RoundTripIsBitExact) {
  const auto streams = random_streams(512 * 10 + 100, 1);
  const auto packets = packetize(streams, 3, 512, 777);
  ASSERT_EQ(packets.size(), 11u);
  EXPECT_EQ(packets[0].payload.size(), 200u * 64);
  EXPECT_EQ(packets.back().frames, 100u);
  const auto res = depacketize(packets, false);
  ASSERT_EQ(res.fpgas.size(), 1u);
  EXPECT_TRUE(res.gaps.empty());
  EXPECT_EQ(res.fpgas[0].start_timestamp, 777u);
  EXPECT_EQ(res.fpgas[0].fpga_id, 3);
  for (std::size_t ch = 0; ch < 200; ++ch) {
    EXPECT_TRUE(same_bits(res.fpgas[0].channels[ch], streams[ch])) << ch;
    EXPECT_EQ(res.fpgas[0].channels[ch].channel_id, 600 + static_cast<int>(ch));
  }
}

TEST(Packets, UnalignedFrameCounts) {
  const auto streams = random_streams(1000, 2);
  const auto res = depacketize(packetize(streams, 0, 37), false);
  for (std::size_t ch = 0; ch < 200; ++ch) EXPECT_TRUE(same_bits(res.fpgas[0].channels[ch], streams[ch]));
}

TEST(Packets, ShuffledPacketsFromSeveralFpgas) {
  const auto a = random_streams(4096, 3);
  const auto b = random_streams(4096, 4);
  auto packets = packetize(a, 0, 256);
  const auto pb = packetize(b, 1, 256);
  packets.insert(packets.end(), pb.begin(), pb.end());
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto res = depacketize(shuffle_packets(packets, seed), false);
    ASSERT_EQ(res.fpgas.size(), 2u);
    EXPECT_EQ(res.fpgas[0].fpga_id, 0);
    EXPECT_EQ(res.fpgas[1].fpga_id, 1);
    for (std::size_t ch = 0; ch < 200; ++ch) {
      EXPECT_TRUE(same_bits(res.fpgas[0].channels[ch], a[ch]));
      EXPECT_TRUE(same_bits(res.fpgas[1].channels[ch], b[ch]));
    }
  }
}

TEST(Packets, DroppedPacketGapIsExact) {
  const auto streams = random_streams(512 * 10, 5);
  auto packets = packetize(streams, 2, 512, 1000);
  packets.erase(packets.begin() + 5);
  EXPECT_THROW(depacketize(packets, false), ProtocolError);
  const auto res = depacketize(packets, true);
  ASSERT_EQ(res.gaps.size(), 1u);
  EXPECT_EQ(res.gaps[0], (PacketGap{2, 5, 5, 5 * 512, 6 * 512}));
  // received data is in place around the hole
  const auto& got = res.fpgas[0].channels[17];
  EXPECT_EQ(got.length, streams[17].length);
  for (std::size_t i = 0; i < got.length; ++i) {
    if (i < 5 * 512 || i >= 6 * 512) {
      ASSERT_EQ(got.bit(i), streams[17].bit(i)) << i;
    }
  }
}

TEST(Packets, LeadingAndConsecutiveGaps) {
  const auto streams = random_streams(512 * 8, 6);
  auto packets = packetize(streams, 0, 512);
  packets.erase(packets.begin() + 3, packets.begin() + 6);
  packets.erase(packets.begin());
  const auto res = depacketize(packets, true);
  ASSERT_EQ(res.gaps.size(), 2u);
  EXPECT_EQ(res.gaps[0], (PacketGap{0, 0, 0, 0, 512}));
  EXPECT_EQ(res.gaps[1], (PacketGap{0, 3, 5, 3 * 512, 6 * 512}));
}

TEST(Packets, DuplicateSequenceIsProtocolError) {
  auto packets = packetize(random_streams(2048, 7), 0, 512);
  packets.push_back(packets[1]);
  EXPECT_THROW(depacketize(packets, true), ProtocolError);
}

TEST(Packets, SyncErrorFlagPropagates) {
  auto packets = packetize(random_streams(2048, 8), 0, 512);
  EXPECT_FALSE(depacketize(packets, false).fpgas[0].sync_error);
  packets[2].status_flags |= kStatusSyncError;
  EXPECT_TRUE(packets[2].sync_error());
  EXPECT_TRUE(depacketize(packets, false).fpgas[0].sync_error);
}

TEST(Packets, Preconditions) {
  auto streams = random_streams(100, 9);
  streams[3].resize(99);
  EXPECT_THROW(packetize(streams, 0), DomainError);
  streams.pop_back();
  EXPECT_THROW(packetize(streams, 0), DomainError);
}

TEST(Packets, WireFormat) {
  const auto packets = packetize(random_streams(512, 10), 0x0102, 512, 0x1122334455667788ULL);
  const auto bytes = encode_packet(packets[0]);
  ASSERT_EQ(bytes.size(), kPacketHeaderSize + 200u * 64);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SIAM");
  EXPECT_EQ(bytes[4], 0x02);
  EXPECT_EQ(bytes[5], 0x01);
  EXPECT_EQ(bytes[16], 0x88);
  EXPECT_EQ(bytes[23], 0x11);
  DaqPacket back;
  EXPECT_EQ(decode_packet(bytes, back), bytes.size());
  EXPECT_EQ(back.payload, packets[0].payload);
  EXPECT_EQ(back.sample_timestamp, packets[0].sample_timestamp);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_packet(bad, back), ProtocolError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode_packet(bad, back), ProtocolError);
}

TEST(Packets, CaptureFileRoundTrip) {
  const auto streams = random_streams(3000, 11);
  const auto packets = packetize(streams, 4, 512);
  const std::string path = testing::TempDir() + "siam_capture.bin";
  write_capture(path, packets);
  const auto back = read_capture(path);
  ASSERT_EQ(back.size(), packets.size());
  const auto res = depacketize(shuffle_packets(back, 5), false);
  for (std::size_t ch = 0; ch < 200; ++ch) EXPECT_TRUE(same_bits(res.fpgas[0].channels[ch], streams[ch]));
  std::filesystem::remove(path);
}

TEST(Arithmetic, StreamDataRate) {
  EXPECT_NEAR(stream_data_rate(200, kPdmRate, 0), 614.4, 1e-9);
  EXPECT_NEAR(stream_data_rate(200, kPdmRate, 0.01), 620.0, 1.0);
  EXPECT_NEAR(stream_data_rate(1, kPdmRate, 0), 3.072, 1e-12);
  EXPECT_THROW(stream_data_rate(0, kPdmRate, 0), DomainError);
}

TEST(Arithmetic, PhaseSkewBudget) {
  EXPECT_NEAR(phase_skew_budget(3e-9, 20000), 0.0216, 1e-12);
  EXPECT_EQ(phase_skew_budget(0, 12345), 0.0);
  EXPECT_NEAR(phase_skew_budget(1.2e-9, 1000), 4.32e-4, 1e-15);
  EXPECT_THROW(phase_skew_budget(-1, 1000), DomainError);
}

TEST(PcmExport, WavAndRawSidecar) {
  std::vector<PcmBlock> ch(2);
  for (int c = 0; c < 2; ++c) {
    ch[static_cast<std::size_t>(c)].channel_id = 10 + c;
    ch[static_cast<std::size_t>(c)].group_delay = 37.5;
    ch[static_cast<std::size_t>(c)].samples = {c * 100 + 1, -(c * 100 + 2), 3};
  }
  const std::string wav = testing::TempDir() + "siam_pcm.wav";
  write_wav32(wav, ch);
  std::ifstream is(wav, std::ios::binary);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ASSERT_EQ(bytes.size(), 44u + 2 * 3 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RIFF");
  std::int32_t first_right = 0;
  std::memcpy(&first_right, bytes.data() + 48, 4);
  EXPECT_EQ(first_right, 101);

  const std::string raw = testing::TempDir() + "siam_pcm.raw";
  write_raw_pcm(raw, ch);
  EXPECT_EQ(std::filesystem::file_size(raw), 2u * 3 * 4);
  std::ifstream js(raw + ".json");
  const auto meta = nlohmann::json::parse(js);
  EXPECT_EQ(meta["rate"], 48000.0);
  EXPECT_EQ(meta["channels"], 2);
  EXPECT_EQ(meta["group_delay"], 37.5);
  EXPECT_EQ(meta["channel_ids"], (std::vector<int>{10, 11}));

  ch[1].samples.pop_back();
  EXPECT_THROW(write_wav32(wav, ch), DomainError);
  std::filesystem::remove(wav);
  std::filesystem::remove(raw);
  std::filesystem::remove(raw + ".json");
}
