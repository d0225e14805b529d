// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "csifb/errors.hpp"
#include "csifb/rng.hpp"
#include "csifb/tensor.hpp"

namespace csifb {

/// Clustered geometric multipath scenario. A sample is the sum over paths of a
/// complex gain times an array steering vector times a subcarrier phase ramp.
struct ChannelConfig {
  std::size_t n_tx = 64;
  std::size_t n_sub = 64;
  std::size_t n_paths = 10;
  double mean_angle = 0.0;       // mean azimuth of departure [rad]
  double angle_spread = 0.01;    // per-path azimuth/elevation std [rad]
  double delay_spread = 100e-9;  // mean excess delay [s]
  double carrier_offset = 0.0;   // relative carrier offset; element spacing is (1+offset)/2 wavelengths
  double bandwidth = 50e6;       // [Hz]
  std::uint64_t seed = 1;

  void validate() const {
    auto pow2 = [](std::size_t n) { return n > 0 && (n & (n - 1)) == 0; };
    if (!pow2(n_tx) || !pow2(n_sub)) {
      throw ConfigError("n_tx and n_sub must be powers of two, got " + std::to_string(n_tx) + "x" +
                        std::to_string(n_sub));
    }
    if (n_paths < 1) throw ConfigError("n_paths must be >= 1");
    if (!(angle_spread >= 0.0) || !(delay_spread >= 0.0)) {
      throw ConfigError("angle and delay spreads must be non-negative");
    }
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
    if (!(carrier_offset > -1.0)) throw ConfigError("carrier_offset must exceed -1");
    if (!std::isfinite(mean_angle)) throw ConfigError("mean_angle must be finite");
  }

  // 256 antennas are a 64x4 planar array; anything else is a linear array.
  std::size_t array_rows() const { return n_tx == 256 ? 64 : n_tx; }
  std::size_t array_cols() const { return n_tx == 256 ? 4 : 1; }

  friend bool operator==(const ChannelConfig&, const ChannelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ChannelConfig& c) {
  j = nlohmann::json{{"n_tx", c.n_tx},
                     {"n_sub", c.n_sub},
                     {"n_paths", c.n_paths},
                     {"mean_angle", c.mean_angle},
                     {"angle_spread", c.angle_spread},
                     {"delay_spread", c.delay_spread},
                     {"carrier_offset", c.carrier_offset},
                     {"bandwidth", c.bandwidth},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ChannelConfig& c) {
  ChannelConfig d;
  c.n_tx = j.value("n_tx", d.n_tx);
  c.n_sub = j.value("n_sub", d.n_sub);
  c.n_paths = j.value("n_paths", d.n_paths);
  c.mean_angle = j.value("mean_angle", d.mean_angle);
  c.angle_spread = j.value("angle_spread", d.angle_spread);
  c.delay_spread = j.value("delay_spread", d.delay_spread);
  c.carrier_offset = j.value("carrier_offset", d.carrier_offset);
  c.bandwidth = j.value("bandwidth", d.bandwidth);
  c.seed = j.value("seed", d.seed);
}

/// Ordered CSI samples, each a [2, n_tx, n_sub] tensor (real plane, imaginary plane).
struct CsiDataset {
  ChannelConfig config;
  std::vector<Tensor> samples;
  bool normalized = false;
  double scale = 1.0;  // global factor applied by normalize()
  std::string tag;     // train / val / test / eval-stream / ...

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t n_tx() const { return config.n_tx; }
  std::size_t n_sub() const { return config.n_sub; }
  std::size_t elements() const { return config.n_tx * config.n_sub; }

  Shape sample_shape() const { return Shape{2, config.n_tx, config.n_sub}; }

  void validate() const {
    for (const auto& s : samples) {
      if (s.shape() != sample_shape()) {
        throw DimensionError("dataset sample shape " + shape_string(s.shape()) + ", expected " +
                             shape_string(sample_shape()));
      }
      ensure_finite(s, "dataset sample");
    }
  }

  CsiDataset subset(std::size_t begin, std::size_t end) const {
    CsiDataset out = *this;
    out.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                       samples.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
  }
};

namespace detail {

inline Tensor draw_sample(const ChannelConfig& cfg, double mean_angle, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t nt = cfg.n_tx, nc = cfg.n_sub;
  const std::size_t rows = cfg.array_rows(), cols = cfg.array_cols();
  const double spacing = std::numbers::pi * (1.0 + cfg.carrier_offset);
  const double df = cfg.bandwidth / static_cast<double>(nc);
  const double gain_std = std::sqrt(0.5 / static_cast<double>(cfg.n_paths));

  std::vector<std::complex<double>> h(nt * nc);
  std::vector<std::complex<double>> steer(nt), ramp(nc);
  for (std::size_t l = 0; l < cfg.n_paths; ++l) {
    const double azimuth = mean_angle + cfg.angle_spread * rng.normal();
    const double elevation = cfg.angle_spread * rng.normal();
    const double tau = cfg.delay_spread * rng.exponential();
    const std::complex<double> gain(gain_std * rng.normal(), gain_std * rng.normal());
    const double uy = std::sin(azimuth) * std::cos(elevation);
    const double uz = std::sin(elevation);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double phase = spacing * (static_cast<double>(r) * uy + static_cast<double>(c) * uz);
        steer[c * rows + r] = std::polar(1.0, -phase);
      }
    }
    for (std::size_t m = 0; m < nc; ++m) {
      ramp[m] = std::polar(1.0, -2.0 * std::numbers::pi * df * static_cast<double>(m) * tau);
    }
    for (std::size_t n = 0; n < nt; ++n) {
      const std::complex<double> a = gain * steer[n];
      for (std::size_t m = 0; m < nc; ++m) h[n * nc + m] += a * ramp[m];
    }
  }
  Tensor out(Shape{2, nt, nc});
  for (std::size_t i = 0; i < nt * nc; ++i) {
    out[i] = h[i].real();
    out[nt * nc + i] = h[i].imag();
  }
  return out;
}

}  // namespace detail

/// Draws `count` samples; sample i uses an independent stream derived from (seed, i).
inline CsiDataset generate(const ChannelConfig& config, std::size_t count) {
  config.validate();
  if (count < 1) throw ConfigError("generate: count must be >= 1");
  CsiDataset ds;
  ds.config = config;
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.samples.push_back(detail::draw_sample(config, config.mean_angle, derive_seed(config.seed, i)));
  }
  return ds;
}

/// Time-ordered stream whose mean departure angle drifts by `angle_drift`
/// radians per sample, standing in for a user moving along a track.
inline CsiDataset generate_stream(const ChannelConfig& config, std::size_t count,
                                  double angle_drift) {
  config.validate();
  if (count < 1) throw ConfigError("generate_stream: count must be >= 1");
  CsiDataset ds;
  ds.config = config;
  ds.tag = "eval-stream";
  for (std::size_t i = 0; i < count; ++i) {
    const double angle = config.mean_angle + angle_drift * static_cast<double>(i);
    ds.samples.push_back(detail::draw_sample(config, angle, derive_seed(config.seed, i)));
  }
  return ds;
}

/// A new environment: rotated mean angle, rescaled spreads, changed path count.
inline ChannelConfig shift(const ChannelConfig& config, double angle_shift, double spread_scale,
                           int path_delta) {
  if (!(spread_scale >= 0.0)) throw ConfigError("spread_scale must be non-negative");
  const auto paths = static_cast<long long>(config.n_paths) + path_delta;
  if (paths < 1) throw ConfigError("shift would leave fewer than one path");
  ChannelConfig out = config;
  out.mean_angle += angle_shift;
  out.angle_spread *= spread_scale;
  out.delay_spread *= spread_scale;
  out.n_paths = static_cast<std::size_t>(paths);
  out.validate();
  return out;
}

struct DatasetSplit {
  CsiDataset train;
  CsiDataset val;
  CsiDataset test;
};

/// Disjoint, exhaustive split after a seeded shuffle.
inline DatasetSplit split(const CsiDataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5B17));
  rng.shuffle(order);
  const auto n = static_cast<double>(ds.size());
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_train_val = std::min(ds.size(), static_cast<std::size_t>(
                                                   std::llround((fractions[0] + fractions[1]) * n)));
  DatasetSplit out{ds, ds, ds};
  out.train.samples.clear();
  out.val.samples.clear();
  out.test.samples.clear();
  out.train.tag = "train";
  out.val.tag = "val";
  out.test.tag = "test";
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? out.train : (i < n_train_val ? out.val : out.test);
    dst.samples.push_back(ds.samples[order[i]]);
  }
  return out;
}

inline double mean_power(const CsiDataset& ds) {
  if (ds.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : ds.samples) acc += s.squared_norm();
  return acc / static_cast<double>(ds.size());
}

/// Scales every sample by one global constant so the mean squared Frobenius
/// norm equals n_tx * n_sub.
inline CsiDataset normalize(const CsiDataset& ds) {
  const double p = mean_power(ds);
  if (!(p > 0.0) || !std::isfinite(p)) throw NumericalError("normalize: dataset has no power");
  const double s = std::sqrt(static_cast<double>(ds.elements()) / p);
  CsiDataset out = ds;
  for (auto& x : out.samples) x *= s;
  out.normalized = true;
  out.scale = ds.scale * s;
  return out;
}

/// Sample spatial correlation E[h h^H] over samples and subcarriers.
inline Eigen::MatrixXcd spatial_correlation(const CsiDataset& ds) {
  const auto nt = static_cast<Eigen::Index>(ds.n_tx());
  const std::size_t nc = ds.n_sub();
  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(nt, nt);
  Eigen::MatrixXcd block(nt, static_cast<Eigen::Index>(nc));
  for (const auto& s : ds.samples) {
    const std::size_t plane = ds.n_tx() * nc;
    for (Eigen::Index n = 0; n < nt; ++n) {
      for (std::size_t m = 0; m < nc; ++m) {
        const std::size_t i = static_cast<std::size_t>(n) * nc + m;
        block(n, static_cast<Eigen::Index>(m)) = {s[i], s[plane + i]};
      }
    }
    r.noalias() += block * block.adjoint();
  }
  if (!ds.empty()) r /= static_cast<double>(ds.size() * nc);
  return r;
}

/// Fraction of the correlation trace held by the dominant eigenvalue.
inline double dominant_eigen_fraction(const Eigen::MatrixXcd& r) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(r, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double total = ev.sum();
  return total > 0.0 ? ev.maxCoeff() / total : 0.0;
}

/// Frobenius distance between trace-normalized correlation matrices.
inline double correlation_distance(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  const Eigen::MatrixXcd an = a / a.trace().real();
  const Eigen::MatrixXcd bn = b / b.trace().real();
  return (an - bn).norm();
}

}  // namespace csifb
