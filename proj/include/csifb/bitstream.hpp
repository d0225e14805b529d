// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "csifb/bytes.hpp"

namespace csifb {

enum class SectionId : std::uint8_t { kModelUpdate = 1, kLatent = 2 };

struct Section {
  SectionId id;
  Bytes payload;

  friend bool operator==(const Section&, const Section&) = default;
};

/// BITS1 container: "NBIT" | u16 version | u8 count | count x (u8 id, u32 length) | payloads.
struct Bitstream {
  static constexpr std::uint16_t kVersion = 1;
  std::vector<Section> sections;

  const Section* find(SectionId id) const {
    for (const auto& s : sections) {
      if (s.id == id) return &s;
    }
    return nullptr;
  }

  std::size_t payload_bytes(SectionId id) const {
    const Section* s = find(id);
    return s ? s->payload.size() : 0;
  }

  Bytes serialize() const {
    if (sections.size() > 255) throw ConfigError("too many bitstream sections");
    ByteWriter w;
    w.raw(std::string_view("NBIT"));
    w.u16(kVersion);
    w.u8(static_cast<std::uint8_t>(sections.size()));
    for (const auto& s : sections) {
      w.u8(static_cast<std::uint8_t>(s.id));
      w.u32(static_cast<std::uint32_t>(s.payload.size()));
    }
    for (const auto& s : sections) w.raw(s.payload);
    return w.take();
  }

  static Bitstream parse(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.str(4) != "NBIT") throw FormatError("bad bitstream magic", 0);
    const auto version = r.u16();
    if (version != kVersion) throw FormatError("unsupported bitstream version " + std::to_string(version), 4);
    const auto count = r.u8();
    std::vector<std::pair<SectionId, std::uint32_t>> table;
    for (unsigned i = 0; i < count; ++i) {
      const std::size_t at = r.pos();
      const auto id = r.u8();
      if (id != 1 && id != 2) throw FormatError("unknown section id " + std::to_string(id), at);
      for (const auto& [seen, len] : table) {
        if (seen == static_cast<SectionId>(id)) throw FormatError("duplicate section id", at);
      }
      table.emplace_back(static_cast<SectionId>(id), r.u32());
    }
    Bitstream out;
    for (const auto& [id, len] : table) {
      auto payload = r.take(len);
      out.sections.push_back(Section{id, Bytes(payload.begin(), payload.end())});
    }
    if (!r.done()) throw FormatError("trailing bytes after last section", r.pos());
    return out;
  }

  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

}  // namespace csifb
