// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "csifb/prior.hpp"
#include "csifb/range_coder.hpp"
#include "csifb/rng.hpp"
#include "csifb/tensor.hpp"

namespace csifb {

/// Round half away from zero, then clamp to [-A, A].
inline Tensor quantize_unit(const Tensor& z, int alphabet = kLatentAlphabet) {
  Tensor out(z.shape());
  const double a = alphabet;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) throw NumericalError("non-finite latent value");
    out[i] = std::clamp(std::round(z[i]), -a, a);
  }
  return out;
}

/// Unit bins with midpoint reconstruction: integers are already the reconstruction.
inline Tensor dequantize(const Tensor& zbar) { return zbar; }

inline bool is_quantized(const Tensor& z, int alphabet = kLatentAlphabet) {
  for (double v : z.data()) {
    if (v != std::round(v) || std::abs(v) > alphabet) return false;
  }
  return true;
}

/// Additive U(-1/2, 1/2) noise; the stand-in for rounding during training.
inline Tensor relax(const Tensor& z, Rng& rng) {
  Tensor out = z;
  for (auto& v : out.data()) v += rng.uniform() - 0.5;
  return out;
}

inline Tensor uniform_noise(const Shape& shape, Rng& rng) {
  Tensor out(shape);
  for (auto& v : out.data()) v = rng.uniform() - 0.5;
  return out;
}

/// Per-channel coding tables for one prior.
struct LatentTables {
  std::vector<std::vector<double>> pmf;
  std::vector<FrequencyTable> freq;
  int alphabet = kLatentAlphabet;

  static LatentTables from_prior(const prior::View& p, int alphabet = kLatentAlphabet) {
    LatentTables t;
    t.alphabet = alphabet;
    t.pmf = latent_pmfs(p, alphabet);
    for (const auto& q : t.pmf) t.freq.emplace_back(q);
    return t;
  }

  std::size_t channels() const { return pmf.size(); }
  double probability(std::size_t channel, int symbol) const {
    return pmf[channel][static_cast<std::size_t>(symbol + alphabet)];
  }
};

namespace detail {

inline void check_grid(const Tensor& zbar, const LatentTables& t) {
  if (zbar.rank() < 1 || zbar.dim(0) != t.channels()) {
    throw DimensionError("latent grid " + shape_string(zbar.shape()) + " vs " +
                         std::to_string(t.channels()) + " prior channels");
  }
  if (!is_quantized(zbar, t.alphabet)) throw ConfigError("latent grid has values outside the coder alphabet");
}

}  // namespace detail

/// Discrete rate -sum log2 pmf(zbar) under the coding pmfs.
inline double discrete_rate_bits(const Tensor& zbar, const LatentTables& t) {
  detail::check_grid(zbar, t);
  const std::size_t per = zbar.size() / zbar.dim(0);
  double bits = 0.0;
  for (std::size_t c = 0; c < t.channels(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      bits -= std::log2(t.probability(c, static_cast<int>(zbar[c * per + i])));
    }
  }
  return bits;
}

inline Bytes entropy_encode(const Tensor& zbar, const LatentTables& t) {
  detail::check_grid(zbar, t);
  RangeEncoder enc;
  const std::size_t per = zbar.empty() ? 0 : zbar.size() / zbar.dim(0);
  for (std::size_t c = 0; c < t.channels(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      enc.encode(t.freq[c], static_cast<std::size_t>(static_cast<int>(zbar[c * per + i]) + t.alphabet));
    }
  }
  return enc.finish();
}

/// Decodes exactly shape_size(shape) symbols; the prior must be the encoder's.
inline Tensor entropy_decode(std::span<const std::uint8_t> section, const LatentTables& t, const Shape& shape) {
  if (shape.empty() || shape[0] != t.channels()) {
    throw DimensionError("latent shape " + shape_string(shape) + " does not match prior channels");
  }
  Tensor out(shape);
  RangeDecoder dec(section);
  const std::size_t per = out.size() / shape[0];
  for (std::size_t c = 0; c < t.channels(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      out[c * per + i] = static_cast<double>(static_cast<int>(dec.decode(t.freq[c])) - t.alphabet);
    }
  }
  if (dec.consumed() != section.size()) throw DecodeError("latent section has trailing bytes");
  return out;
}

}  // namespace csifb
