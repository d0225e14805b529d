// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "csifb/bytes.hpp"
#include "csifb/channel.hpp"

namespace csifb {

// CSIBIN layout (little-endian):
//   "CSIB" | u16 version=1 | u16 flags (bit0 normalized) | u32 count | u32 n_tx | u32 n_sub
//   then count records of 2*n_tx*n_sub f32, real plane then imaginary plane.
inline constexpr char kCsibMagic[4] = {'C', 'S', 'I', 'B'};
inline constexpr std::uint16_t kCsibVersion = 1;
inline constexpr std::size_t kCsibHeaderSize = 20;

inline Bytes encode_csibin(const CsiDataset& ds) {
  ds.validate();
  ByteWriter w;
  w.raw(std::string_view(kCsibMagic, 4));
  w.u16(kCsibVersion);
  w.u16(ds.normalized ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.n_tx()));
  w.u32(static_cast<std::uint32_t>(ds.n_sub()));
  for (const auto& s : ds.samples) {
    for (double v : s.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

/// Parses a CSIBIN image. Only the shape and the normalized flag come from the
/// file; the remaining config fields keep their defaults unless a manifest is merged.
inline CsiDataset decode_csibin(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::string magic = r.str(4);
  if (magic != std::string_view(kCsibMagic, 4)) throw FormatError("bad CSIBIN magic", 0);
  const auto version = r.u16();
  if (version != kCsibVersion) {
    throw FormatError("unsupported CSIBIN version " + std::to_string(version), 4);
  }
  const auto flags = r.u16();
  if ((flags & ~1u) != 0) throw FormatError("unknown CSIBIN flags", 6);
  const auto count = r.u32();
  const auto n_tx = r.u32();
  const auto n_sub = r.u32();
  if (n_tx == 0 || n_sub == 0) throw FormatError("CSIBIN with zero dimension", 12);
  const std::size_t per = 2ull * n_tx * n_sub;
  if (r.remaining() / 4 / per < count) {
    throw FormatError("CSIBIN payload truncated: header says " + std::to_string(count) + " records",
                      r.pos() + r.remaining());
  }
  if (r.remaining() != static_cast<std::size_t>(count) * per * 4) {
    throw FormatError("CSIBIN has trailing bytes", kCsibHeaderSize + count * per * 4);
  }
  CsiDataset ds;
  ds.config.n_tx = n_tx;
  ds.config.n_sub = n_sub;
  ds.normalized = (flags & 1u) != 0;
  ds.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t(Shape{2, n_tx, n_sub});
    for (std::size_t j = 0; j < per; ++j) {
      const float v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite CSI value", r.pos() - 4);
      t[j] = v;
    }
    ds.samples.push_back(std::move(t));
  }
  return ds;
}

inline std::filesystem::path manifest_path_for(const std::filesystem::path& data) {
  auto p = data;
  p += ".json";
  return p;
}

inline nlohmann::json dataset_manifest(const CsiDataset& ds, const Bytes& image) {
  return nlohmann::json{{"format", "CSIBIN"},
                        {"version", kCsibVersion},
                        {"config", ds.config},
                        {"seed", ds.config.seed},
                        {"split", ds.tag},
                        {"count", ds.size()},
                        {"normalized", ds.normalized},
                        {"scale", ds.scale},
                        {"sha256", sha256_hex(image)}};
}

/// Writes the dataset and its companion manifest (<path>.json).
inline void write_csibin(const std::filesystem::path& path, const CsiDataset& ds) {
  const Bytes image = encode_csibin(ds);
  write_file(path, image);
  write_text(manifest_path_for(path), dataset_manifest(ds, image).dump(2));
}

inline CsiDataset ingest(const std::filesystem::path& path) {
  const Bytes image = read_file(path);
  CsiDataset ds = decode_csibin(image);
  const auto mpath = manifest_path_for(path);
  if (std::filesystem::exists(mpath)) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(mpath));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed dataset manifest " + mpath.string() + ": " + e.what(), 0);
    }
    if (m.contains("sha256") && m["sha256"].get<std::string>() != sha256_hex(image)) {
      throw FormatError("dataset manifest hash does not match " + path.string(), 0);
    }
    if (m.contains("config")) {
      const auto cfg = m["config"].get<ChannelConfig>();
      if (cfg.n_tx != ds.config.n_tx || cfg.n_sub != ds.config.n_sub) {
        throw FormatError("manifest shape disagrees with CSIBIN header", 12);
      }
      ds.config = cfg;
    }
    ds.tag = m.value("split", std::string{});
    ds.scale = m.value("scale", 1.0);
  }
  return ds;
}

}  // namespace csifb
