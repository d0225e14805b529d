// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "csifb/adam.hpp"
#include "csifb/bytes.hpp"
#include "csifb/codec.hpp"

namespace csifb {

/// Optimizer state carried by a resumable checkpoint.
struct TrainState {
  AdamState adam_phi;
  AdamState adam_theta;
  std::uint64_t epoch = 0;
  double best_val = 0.0;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct Checkpoint {
  Model model;
  std::optional<TrainState> train;
  nlohmann::json meta = nlohmann::json::object();
};

// CKPT1 layout: "NCKP" | u16 version | u32 header length | JSON header |
// f64 tensors in header order (phi, theta, then optional Adam moments).
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void describe(nlohmann::json& list, const std::string& group, const ParamSet& ps) {
  for (std::size_t i = 0; i < ps.count(); ++i) {
    list.push_back({{"group", group}, {"name", ps.names[i]}, {"shape", ps.tensors[i].shape()}});
  }
}

inline void describe_moments(nlohmann::json& list, const std::string& group, const ParamSet& ps) {
  for (const char* which : {"m", "v"}) {
    for (std::size_t i = 0; i < ps.count(); ++i) {
      list.push_back({{"group", group + "." + which}, {"name", ps.names[i]}, {"shape", ps.tensors[i].shape()}});
    }
  }
}

}  // namespace detail

inline Bytes serialize_checkpoint(const Checkpoint& ck) {
  check_layout(ck.model);
  nlohmann::json header;
  header["topology"] = ck.model.topo;
  header["theta_order"] = ck.model.theta.names;
  header["theta_len"] = ck.model.theta.total_size();
  header["phi_len"] = ck.model.phi.total_size();
  nlohmann::json tensors = nlohmann::json::array();
  detail::describe(tensors, "phi", ck.model.phi);
  detail::describe(tensors, "theta", ck.model.theta);
  std::vector<const Tensor*> payload;
  for (const auto& t : ck.model.phi.tensors) payload.push_back(&t);
  for (const auto& t : ck.model.theta.tensors) payload.push_back(&t);
  if (ck.train) {
    const TrainState& ts = *ck.train;
    header["train"] = {{"epoch", ts.epoch},
                       {"best_val", ts.best_val},
                       {"adam_phi_step", ts.adam_phi.step},
                       {"adam_theta_step", ts.adam_theta.step},
                       {"has_phi_moments", !ts.adam_phi.m.empty()},
                       {"has_theta_moments", !ts.adam_theta.m.empty()}};
    auto add_moments = [&](const std::string& group, const ParamSet& ps, const AdamState& st) {
      if (st.m.empty()) return;
      if (st.m.size() != ps.count() || st.v.size() != ps.count()) {
        throw DimensionError("Adam state does not match " + group + " parameters");
      }
      detail::describe_moments(tensors, group, ps);
      for (const auto& t : st.m) payload.push_back(&t);
      for (const auto& t : st.v) payload.push_back(&t);
    };
    add_moments("adam_phi", ck.model.phi, ts.adam_phi);
    add_moments("adam_theta", ck.model.theta, ts.adam_theta);
  }
  header["tensors"] = tensors;
  header["meta"] = ck.meta;
  const std::string text = header.dump();
  ByteWriter w;
  w.raw(std::string_view("NCKP"));
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  for (const Tensor* t : payload) {
    for (double v : t->data()) w.f64(v);
  }
  return w.take();
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "NCKP") throw FormatError("bad checkpoint magic", 0);
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto header_len = r.u32();
  const std::size_t header_at = r.pos();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what(), header_at);
  }
  Checkpoint ck;
  try {
    ck.model.topo = header.at("topology").get<Topology>();
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& d : header.at("tensors")) {
      const auto shape = d.at("shape").get<Shape>();
      Tensor t(shape);
      const std::size_t at = r.pos();
      r.require(t.size() * 8);
      for (auto& v : t.data()) v = r.f64();
      const auto group = d.at("group").get<std::string>();
      const auto name = d.at("name").get<std::string>();
      if (group == "phi") {
        ck.model.phi.add(name, std::move(t));
      } else if (group == "theta") {
        ck.model.theta.add(name, std::move(t));
      } else {
        if (!ck.train) ck.train.emplace();
        auto& st = group.starts_with("adam_phi") ? ck.train->adam_phi : ck.train->adam_theta;
        if (group.ends_with(".m")) {
          st.m.push_back(std::move(t));
        } else if (group.ends_with(".v")) {
          st.v.push_back(std::move(t));
        } else {
          throw FormatError("unknown tensor group " + group, at);
        }
      }
    }
    if (header.contains("train")) {
      if (!ck.train) ck.train.emplace();
      const auto& tr = header["train"];
      ck.train->epoch = tr.at("epoch").get<std::uint64_t>();
      ck.train->best_val = tr.at("best_val").get<double>();
      ck.train->adam_phi.step = tr.at("adam_phi_step").get<std::uint64_t>();
      ck.train->adam_theta.step = tr.at("adam_theta_step").get<std::uint64_t>();
    }
    if (header.at("theta_order").get<std::vector<std::string>>() != ck.model.theta.names) {
      throw FormatError("checkpoint theta ordering disagrees with its tensor list", header_at);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header field error: ") + e.what(), header_at);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint tensors", r.pos());
  try {
    check_layout(ck.model);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint does not match its topology: ") + e.what(), header_at);
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace csifb
