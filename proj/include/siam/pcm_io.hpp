#pragma once

// PCM export: 32-bit integer multichannel WAV, or raw interleaved int32 plus a JSON sidecar.

#include "siam/acquisition.hpp"
#include "siam/error.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace siam {

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 24)};
  os.write(b, 4);
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void write_interleaved(std::ostream& os, std::span<const PcmBlock> channels) {
  const std::size_t n = channels.front().samples.size();
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& c : channels) write_u32(os, static_cast<std::uint32_t>(c.samples[i]));
}

inline void check_blocks(std::span<const PcmBlock> channels) {
  if (channels.empty()) throw DomainError("pcm export: no channels");
  for (const auto& c : channels)
    if (c.samples.size() != channels.front().samples.size() || c.rate != channels.front().rate)
      throw DomainError("pcm export: channels differ in length or rate");
}

}  // namespace detail

inline void write_wav32(const std::string& path, std::span<const PcmBlock> channels) {
  detail::check_blocks(channels);
  const auto nch = static_cast<std::uint32_t>(channels.size());
  const auto rate = static_cast<std::uint32_t>(channels.front().rate);
  const auto data_bytes = static_cast<std::uint32_t>(channels.front().samples.size() * nch * 4);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("RIFF", 4);
  detail::write_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::write_u32(os, 16);
  detail::write_u16(os, 1);  // integer PCM
  detail::write_u16(os, static_cast<std::uint16_t>(nch));
  detail::write_u32(os, rate);
  detail::write_u32(os, rate * nch * 4);
  detail::write_u16(os, static_cast<std::uint16_t>(nch * 4));
  detail::write_u16(os, 32);
  os.write("data", 4);
  detail::write_u32(os, data_bytes);
  detail::write_interleaved(os, channels);
}

/// Interleaved little-endian int32 samples in path, metadata in path + ".json".
inline void write_raw_pcm(const std::string& path, std::span<const PcmBlock> channels) {
  detail::check_blocks(channels);
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    detail::write_interleaved(os, channels);
  }
  nlohmann::json meta;
  meta["rate"] = channels.front().rate;
  meta["channels"] = channels.size();
  meta["samples"] = channels.front().samples.size();
  meta["group_delay"] = channels.front().group_delay;
  meta["group_delay_unit"] = "samples";
  meta["format"] = "int32le_interleaved";
  meta["full_scale"] = static_cast<std::int64_t>(kPcmFullScale);
  std::vector<int> ids;
  for (const auto& c : channels) ids.push_back(c.channel_id);
  meta["channel_ids"] = ids;
  std::ofstream js(path + ".json");
  js << meta.dump(2) << '\n';
}

}  // namespace siam
