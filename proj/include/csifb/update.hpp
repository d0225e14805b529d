// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "csifb/bytes.hpp"
#include "csifb/range_coder.hpp"

namespace csifb {

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Q_t(d) = clip(floor(d/t + 1/2) t, -c, c), c = (N-1) t / 2. Levels are
/// indexed j in [-M, M], M = ceil((N-1)/2); for even N the two outermost
/// levels sit at +-c, half a step beyond +-(M-1) t.
struct UpdateQuantizer {
  double t = 0.005;
  int n = 50;

  static UpdateQuantizer make(double t, int n) {
    UpdateQuantizer q{to_f32(t), n};
    q.validate();
    return q;
  }

  void validate() const {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("update bin width t must be positive");
    if (n < 2 || n > 65535) throw ConfigError("update bin count N must be in [2, 65535]");
  }

  double clip() const { return (n - 1) * t / 2.0; }
  int max_index() const { return n / 2; }  // ceil((N-1)/2)
  std::size_t levels() const { return static_cast<std::size_t>(2 * max_index() + 1); }

  int index(double d) const {
    if (!std::isfinite(d)) throw NumericalError("non-finite model update");
    if (std::abs(d) >= clip()) return d > 0 ? max_index() : -max_index();  // d/t can land a hair below M - 1/2
    const double k = std::floor(d / t + 0.5);
    const double m = max_index();
    return static_cast<int>(std::clamp(k, -m, m));
  }

  double value(int j) const { return std::clamp(j * t, -clip(), clip()); }
  double quantize(double d) const { return value(index(d)); }

  // Bin of level j is [lower, upper); the outermost bins are open-ended.
  double lower(int j) const {
    return j == -max_index() ? -std::numeric_limits<double>::infinity() : (j - 0.5) * t;
  }
  double upper(int j) const {
    return j == max_index() ? std::numeric_limits<double>::infinity() : (j + 0.5) * t;
  }

  friend bool operator==(const UpdateQuantizer&, const UpdateQuantizer&) = default;
};

/// Quantized update: level indices plus the reconstructed offsets.
struct QuantizedUpdate {
  std::vector<int> index;
  std::vector<double> value;

  std::size_t size() const { return index.size(); }
  std::size_t nonzero() const {
    return static_cast<std::size_t>(std::count_if(index.begin(), index.end(), [](int j) { return j != 0; }));
  }

  friend bool operator==(const QuantizedUpdate&, const QuantizedUpdate&) = default;
};

inline QuantizedUpdate quantize_update(std::span<const double> delta, const UpdateQuantizer& q) {
  QuantizedUpdate out;
  out.index.reserve(delta.size());
  out.value.reserve(delta.size());
  for (double d : delta) {
    const int j = q.index(d);
    out.index.push_back(j);
    out.value.push_back(q.value(j));
  }
  return out;
}

inline QuantizedUpdate from_indices(std::vector<int> index, const UpdateQuantizer& q) {
  QuantizedUpdate out;
  out.value.reserve(index.size());
  for (int j : index) {
    if (j < -q.max_index() || j > q.max_index()) throw ConfigError("update level outside quantizer grid");
    out.value.push_back(q.value(j));
  }
  out.index = std::move(index);
  return out;
}

namespace detail {

inline double normal_cdf(double x, double s) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  return 0.5 * std::erfc(-x / (s * std::numbers::sqrt2));
}

inline double normal_pdf(double x, double s) {
  const double z = x / s;
  return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
}

// Mass of N(0, s^2) on [a, b], evaluated in the tail that avoids cancellation.
inline double normal_mass(double a, double b, double s) {
  if (a >= 0.0) return normal_cdf(-a, s) - normal_cdf(-b, s);
  if (b <= 0.0) return normal_cdf(b, s) - normal_cdf(a, s);
  return 1.0 - normal_cdf(a, s) - normal_cdf(-b, s);
}

}  // namespace detail

/// p(d) = (N(d; 0, sigma^2) + alpha N(d; 0, (t/6)^2)) / (1 + alpha), or a
/// uniform pmf over the quantizer levels (ablation baseline).
struct UpdatePrior {
  enum class Kind { kSpikeSlab, kUniform };
  Kind kind = Kind::kSpikeSlab;
  double sigma = 0.05;
  double alpha = 1000.0;
  double t = 0.005;

  static UpdatePrior spike_slab(double sigma, double alpha, double t) {
    UpdatePrior p{Kind::kSpikeSlab, to_f32(sigma), to_f32(alpha), to_f32(t)};
    p.validate();
    return p;
  }

  static UpdatePrior uniform(double t) { return UpdatePrior{Kind::kUniform, 0.0, 0.0, to_f32(t)}; }

  bool is_uniform() const { return kind == Kind::kUniform; }
  double spike_std() const { return t / 6.0; }

  void validate() const {
    if (!(t > 0.0)) throw ConfigError("update prior needs t > 0");
    if (is_uniform()) return;
    // f32 storage may shave an ulp off the bound.
    if (!(sigma >= 5.0 * t / 6.0 * (1.0 - 1e-6))) throw ConfigError("slab sigma must be at least 5t/6");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("spike weight alpha must be >= 0");
  }

  double density(double d) const {
    if (is_uniform()) throw ConfigError("uniform update prior has no density");
    return (detail::normal_pdf(d, sigma) + alpha * detail::normal_pdf(d, spike_std())) / (1.0 + alpha);
  }

  double mass(double a, double b) const {
    return (detail::normal_mass(a, b, sigma) + alpha * detail::normal_mass(a, b, spike_std())) /
           (1.0 + alpha);
  }

  /// Probability of every quantizer level, indexed j + M.
  std::vector<double> bin_pmf(const UpdateQuantizer& q) const {
    if (std::abs(q.t - t) > 1e-12 * t) throw ConfigError("update prior and quantizer disagree on t");
    std::vector<double> p(q.levels());
    if (is_uniform()) {
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
      return p;
    }
    for (int j = -q.max_index(); j <= q.max_index(); ++j) {
      p[static_cast<std::size_t>(j + q.max_index())] = mass(q.lower(j), q.upper(j));
    }
    return p;
  }

  friend bool operator==(const UpdatePrior&, const UpdatePrior&) = default;
};

inline double bin_probability(double grid_value, const UpdatePrior& prior, const UpdateQuantizer& q) {
  const int j = q.index(grid_value);
  if (q.value(j) != grid_value) throw ConfigError("value is not on the update quantizer grid");
  return prior.bin_pmf(q)[static_cast<std::size_t>(j + q.max_index())];
}

/// Discrete update rate: -sum log2 p[level].
inline double update_rate_bits(const QuantizedUpdate& u, const UpdatePrior& prior, const UpdateQuantizer& q) {
  const auto pmf = prior.bin_pmf(q);
  double bits = 0.0;
  for (int j : u.index) bits -= std::log2(pmf[static_cast<std::size_t>(j + q.max_index())]);
  return bits;
}

struct SurrogateRate {
  double bits = 0.0;
  std::vector<double> grad;  // d bits / d delta
};

/// Differentiable update rate: -sum log2 of the prior mass in a width-t window
/// centred on each (unquantized) update. Non-negative, and equal to the
/// discrete rate of a zero update.
inline SurrogateRate update_surrogate(std::span<const double> delta, const UpdatePrior& prior,
                                      const UpdateQuantizer& q) {
  SurrogateRate out;
  out.grad.assign(delta.size(), 0.0);
  const double h = prior.t / 2.0;
  if (prior.is_uniform()) {
    out.bits = static_cast<double>(delta.size()) * std::log2(static_cast<double>(q.levels()));
    return out;
  }
  const double inv_ln2 = 1.0 / std::numbers::ln2;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double d = delta[i];
    const double m = std::max(prior.mass(d - h, d + h), 1e-300);
    out.bits -= std::log2(m);
    out.grad[i] = -inv_ln2 * (prior.density(d + h) - prior.density(d - h)) / m;
  }
  return out;
}

// Section 1 header: f32 t | u16 N | f32 sigma | f32 alpha | u32 len.
inline constexpr std::size_t kUpdateHeaderSize = 18;

inline Bytes encode_update(const QuantizedUpdate& u, const UpdatePrior& prior, const UpdateQuantizer& q) {
  ByteWriter w;
  w.f32(static_cast<float>(q.t));
  w.u16(static_cast<std::uint16_t>(q.n));
  w.f32(static_cast<float>(prior.sigma));
  w.f32(static_cast<float>(prior.alpha));
  w.u32(static_cast<std::uint32_t>(u.size()));
  const FrequencyTable table(prior.bin_pmf(q));
  RangeEncoder enc;
  for (int j : u.index) {
    if (j < -q.max_index() || j > q.max_index()) throw ConfigError("update level outside quantizer grid");
    enc.encode(table, static_cast<std::size_t>(j + q.max_index()));
  }
  w.raw(enc.finish());
  return w.take();
}

struct UpdateHeader {
  double t;
  int n;
  double sigma;
  double alpha;
  std::uint32_t len;
};

inline UpdateHeader read_update_header(std::span<const std::uint8_t> section) {
  ByteReader r(section);
  UpdateHeader h{};
  h.t = r.f32();
  h.n = r.u16();
  h.sigma = r.f32();
  h.alpha = r.f32();
  h.len = r.u32();
  return h;
}

/// Decodes a model-update section after checking its header against the
/// receiver's quantizer, prior and expected parameter count.
inline QuantizedUpdate decode_update(std::span<const std::uint8_t> section, const UpdatePrior& prior,
                                     const UpdateQuantizer& q, std::size_t len) {
  const UpdateHeader h = read_update_header(section);
  if (static_cast<float>(h.t) != static_cast<float>(q.t) || h.n != q.n) {
    throw FormatError("update section quantizer (t, N) does not match receiver configuration", 0);
  }
  if (static_cast<float>(h.sigma) != static_cast<float>(prior.sigma) ||
      static_cast<float>(h.alpha) != static_cast<float>(prior.alpha)) {
    throw FormatError("update section prior (sigma, alpha) does not match receiver configuration", 6);
  }
  if (h.len != len) {
    throw FormatError("update section carries " + std::to_string(h.len) + " parameters, expected " +
                          std::to_string(len),
                      14);
  }
  const FrequencyTable table(prior.bin_pmf(q));
  const auto payload = section.subspan(kUpdateHeaderSize);
  RangeDecoder dec(payload);
  std::vector<int> index(len);
  for (auto& j : index) j = static_cast<int>(dec.decode(table)) - q.max_index();
  if (dec.consumed() != payload.size()) throw DecodeError("update section has trailing bytes");
  return from_indices(std::move(index), q);
}

inline void to_json(nlohmann::json& j, const UpdateQuantizer& q) { j = {{"t", q.t}, {"n", q.n}}; }
inline void from_json(const nlohmann::json& j, UpdateQuantizer& q) {
  q = UpdateQuantizer::make(j.value("t", 0.005), j.value("n", 50));
}

inline void to_json(nlohmann::json& j, const UpdatePrior& p) {
  j = {{"kind", p.is_uniform() ? "uniform" : "spike_slab"}, {"sigma", p.sigma}, {"alpha", p.alpha}, {"t", p.t}};
}
inline void from_json(const nlohmann::json& j, UpdatePrior& p) {
  const double t = j.value("t", 0.005);
  if (j.value("kind", std::string("spike_slab")) == "uniform") {
    p = UpdatePrior::uniform(t);
  } else {
    p = UpdatePrior::spike_slab(j.value("sigma", 0.05), j.value("alpha", 1000.0), t);
  }
}

}  // namespace csifb
