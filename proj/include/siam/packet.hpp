#pragma once

// DAQ packet framing for one FPGA's 200 PDM channels, resequencing, gap reports and the raw
// capture file (a plain concatenation of little-endian packets).

#include "siam/acquisition.hpp"
#include "siam/error.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace siam {

inline constexpr std::array<std::uint8_t, 4> kPacketMagic{'S', 'I', 'A', 'M'};
inline constexpr std::size_t kPacketHeaderSize = 24;
inline constexpr std::size_t kChannelsPerPacket = 200;
inline constexpr std::size_t kDefaultFramesPerPacket = 512;
inline constexpr std::uint16_t kStatusSyncError = 0x0001;

/// Header layout (little-endian): magic[4] fpga_id:u16 status:u16 sequence:u32 frames:u32
/// timestamp:u64, then channel-major payload with ceil(frames/8) bytes per channel.
struct DaqPacket {
  std::uint16_t fpga_id = 0;
  std::uint16_t status_flags = 0;
  std::uint32_t sequence = 0;
  std::uint32_t frames = 0;
  std::uint64_t sample_timestamp = 0;  // PDM clock ticks of the first frame
  std::vector<std::uint8_t> payload;

  bool sync_error() const { return status_flags & kStatusSyncError; }
  static std::size_t bytes_per_channel(std::size_t frames) { return (frames + 7) / 8; }
  std::size_t wire_size() const { return kPacketHeaderSize + payload.size(); }
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_packet(const DaqPacket& p) {
  std::vector<std::uint8_t> out(kPacketMagic.begin(), kPacketMagic.end());
  out.reserve(p.wire_size());
  detail::put_le(out, p.fpga_id);
  detail::put_le(out, p.status_flags);
  detail::put_le(out, p.sequence);
  detail::put_le(out, p.frames);
  detail::put_le(out, p.sample_timestamp);
  out.insert(out.end(), p.payload.begin(), p.payload.end());
  return out;
}

/// Decodes one packet from the front of bytes; returns the number of bytes consumed.
inline std::size_t decode_packet(std::span<const std::uint8_t> bytes, DaqPacket& out) {
  if (bytes.size() < kPacketHeaderSize) throw ProtocolError("packet: truncated header");
  if (!std::equal(kPacketMagic.begin(), kPacketMagic.end(), bytes.begin())) throw ProtocolError("packet: bad magic");
  const std::uint8_t* h = bytes.data();
  out.fpga_id = detail::get_le<std::uint16_t>(h + 4);
  out.status_flags = detail::get_le<std::uint16_t>(h + 6);
  out.sequence = detail::get_le<std::uint32_t>(h + 8);
  out.frames = detail::get_le<std::uint32_t>(h + 12);
  out.sample_timestamp = detail::get_le<std::uint64_t>(h + 16);
  const std::size_t payload = kChannelsPerPacket * DaqPacket::bytes_per_channel(out.frames);
  if (bytes.size() < kPacketHeaderSize + payload) throw ProtocolError("packet: truncated payload");
  out.payload.assign(bytes.begin() + kPacketHeaderSize, bytes.begin() + static_cast<std::ptrdiff_t>(kPacketHeaderSize + payload));
  return kPacketHeaderSize + payload;
}

/// Splits 200 equal-length streams into packets of frames_per_packet frames (the last may be short).
inline std::vector<DaqPacket> packetize(std::span<const PdmStream> streams, std::uint16_t fpga_id,
                                        std::size_t frames_per_packet = kDefaultFramesPerPacket,
                                        std::uint64_t start_timestamp = 0) {
  if (streams.size() != kChannelsPerPacket)
    throw DomainError("packetize: expected 200 channels, got " + std::to_string(streams.size()));
  if (frames_per_packet == 0) throw DomainError("packetize: frames_per_packet must be > 0");
  const std::size_t n = streams.front().length;
  for (const auto& s : streams)
    if (s.length != n) throw DomainError("packetize: channels have different lengths");

  std::vector<DaqPacket> out;
  std::uint32_t seq = 0;
  for (std::size_t start = 0; start < n; start += frames_per_packet, ++seq) {
    DaqPacket p;
    p.fpga_id = fpga_id;
    p.sequence = seq;
    p.frames = static_cast<std::uint32_t>(std::min(frames_per_packet, n - start));
    p.sample_timestamp = start_timestamp + start;
    const std::size_t bpc = DaqPacket::bytes_per_channel(p.frames);
    p.payload.assign(kChannelsPerPacket * bpc, 0);
    for (std::size_t ch = 0; ch < kChannelsPerPacket; ++ch) {
      std::uint8_t* dst = p.payload.data() + ch * bpc;
      const auto& s = streams[ch];
      if (start % 8 == 0) {
        std::memcpy(dst, s.bits.data() + start / 8, bpc);
        if (p.frames % 8) dst[bpc - 1] &= static_cast<std::uint8_t>((1u << (p.frames % 8)) - 1);
      } else {
        for (std::size_t f = 0; f < p.frames; ++f)
          if (s.bit(start + f)) dst[f >> 3] |= static_cast<std::uint8_t>(1u << (f & 7));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct PacketGap {
  std::uint16_t fpga_id = 0;
  std::uint32_t first_sequence = 0;  // inclusive
  std::uint32_t last_sequence = 0;   // inclusive
  std::uint64_t sample_begin = 0;    // inclusive, relative to the stream start
  std::uint64_t sample_end = 0;      // exclusive

  bool operator==(const PacketGap&) const = default;
};

struct FpgaCapture {
  std::uint16_t fpga_id = 0;
  std::uint64_t start_timestamp = 0;
  std::vector<PdmStream> channels;
  bool sync_error = false;
};

struct DepacketizeResult {
  std::vector<FpgaCapture> fpgas;  // ascending fpga_id
  std::vector<PacketGap> gaps;
};

/// Resequences packets by (fpga_id, sequence) and rebuilds the channel streams. Missing
/// sequences are reported as gaps and filled with alternating bits (zero mean). Loss after the
/// last received packet cannot be detected.
inline DepacketizeResult depacketize(std::span<const DaqPacket> packets, bool allow_gaps) {
  std::map<std::uint16_t, std::vector<const DaqPacket*>> by_fpga;
  for (const auto& p : packets) by_fpga[p.fpga_id].push_back(&p);

  DepacketizeResult res;
  for (auto& [fpga, list] : by_fpga) {
    std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->sequence < b->sequence; });
    for (std::size_t i = 1; i < list.size(); ++i)
      if (list[i]->sequence == list[i - 1]->sequence)
        throw ProtocolError("depacketize: duplicate sequence " + std::to_string(list[i]->sequence) + " from fpga " +
                            std::to_string(fpga));
    for (const auto* p : list)
      if (p->payload.size() != kChannelsPerPacket * DaqPacket::bytes_per_channel(p->frames))
        throw ProtocolError("depacketize: payload size mismatch in sequence " + std::to_string(p->sequence));

    // Stream origin, assuming every packet before the first received one was full-size.
    const DaqPacket& first = *list.front();
    const std::uint64_t lead = static_cast<std::uint64_t>(first.sequence) * first.frames;
    if (first.sample_timestamp < lead) throw ProtocolError("depacketize: inconsistent timestamps");
    const std::uint64_t origin = first.sample_timestamp - lead;

    std::vector<PacketGap> gaps;
    if (first.sequence > 0) gaps.push_back({fpga, 0, first.sequence - 1, 0, lead});
    for (std::size_t i = 1; i < list.size(); ++i) {
      const auto* a = list[i - 1];
      const auto* b = list[i];
      if (b->sequence != a->sequence + 1)
        gaps.push_back({fpga, a->sequence + 1, b->sequence - 1, a->sample_timestamp + a->frames - origin,
                        b->sample_timestamp - origin});
      else if (b->sample_timestamp != a->sample_timestamp + a->frames)
        throw ProtocolError("depacketize: timestamp discontinuity at sequence " + std::to_string(b->sequence));
    }
    if (!gaps.empty() && !allow_gaps)
      throw ProtocolError("depacketize: fpga " + std::to_string(fpga) + " is missing sequences " +
                          std::to_string(gaps.front().first_sequence) + ".." +
                          std::to_string(gaps.front().last_sequence));

    const DaqPacket& last = *list.back();
    const std::uint64_t total = last.sample_timestamp + last.frames - origin;
    FpgaCapture cap;
    cap.fpga_id = fpga;
    cap.start_timestamp = origin;
    cap.channels.resize(kChannelsPerPacket);
    for (std::size_t ch = 0; ch < kChannelsPerPacket; ++ch) {
      auto& s = cap.channels[ch];
      s.channel_id = static_cast<int>(static_cast<std::size_t>(fpga) * kChannelsPerPacket + ch);
      s.resize(static_cast<std::size_t>(total));
    }
    for (const auto& g : gaps)
      for (auto& s : cap.channels)
        for (std::uint64_t i = g.sample_begin; i < g.sample_end; ++i) s.set(static_cast<std::size_t>(i), (i & 1) == 0);
    for (const auto* p : list) {
      cap.sync_error = cap.sync_error || p->sync_error();
      const std::size_t bpc = DaqPacket::bytes_per_channel(p->frames);
      const std::size_t offset = static_cast<std::size_t>(p->sample_timestamp - origin);
      for (std::size_t ch = 0; ch < kChannelsPerPacket; ++ch) {
        const std::uint8_t* src = p->payload.data() + ch * bpc;
        auto& s = cap.channels[ch];
        for (std::size_t f = 0; f < p->frames; ++f) s.set(offset + f, (src[f >> 3] >> (f & 7)) & 1u);
      }
    }
    res.fpgas.push_back(std::move(cap));
    res.gaps.insert(res.gaps.end(), gaps.begin(), gaps.end());
  }
  return res;
}

/// Deterministic reordering, for exercising the resequencer.
inline std::vector<DaqPacket> shuffle_packets(std::vector<DaqPacket> packets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(packets.begin(), packets.end(), rng);
  return packets;
}

inline void write_capture(const std::string& path, std::span<const DaqPacket> packets) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& p : packets) {
    const auto bytes = encode_packet(p);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

inline std::vector<DaqPacket> read_capture(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::vector<DaqPacket> out;
  std::size_t pos = 0;
  while (pos < data.size()) {
    DaqPacket p;
    pos += decode_packet(std::span(data).subspan(pos), p);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace siam
