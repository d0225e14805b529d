// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csifb/kernels.hpp"
#include "csifb/prior.hpp"
#include "csifb/rng.hpp"
#include "csifb/tape.hpp"

namespace csifb {

/// Fixed three-conv encoder / decoder around a 4x spatial reduction per axis.
struct Topology {
  std::size_t n_tx = 64;
  std::size_t n_sub = 64;
  std::size_t width = 64;  // hidden conv channels
  std::size_t kernel = 5;
  std::size_t latent_channels = 2;

  void validate() const {
    if (n_tx % 4 != 0 || n_sub % 4 != 0 || n_tx == 0 || n_sub == 0) {
      throw ConfigError("CSI dimensions must be positive multiples of 4, got " +
                        std::to_string(n_tx) + "x" + std::to_string(n_sub));
    }
    if (kernel % 2 == 0) throw ConfigError("kernel size must be odd");
    if (width == 0 || latent_channels == 0) throw ConfigError("width and latent_channels must be positive");
  }

  Shape input_shape() const { return Shape{2, n_tx, n_sub}; }
  Shape latent_shape() const { return Shape{latent_channels, n_tx / 4, n_sub / 4}; }
  std::size_t elements() const { return n_tx * n_sub; }

  friend bool operator==(const Topology&, const Topology&) = default;
};

inline void to_json(nlohmann::json& j, const Topology& t) {
  j = nlohmann::json{{"n_tx", t.n_tx},
                     {"n_sub", t.n_sub},
                     {"width", t.width},
                     {"kernel", t.kernel},
                     {"latent_channels", t.latent_channels}};
}

inline void from_json(const nlohmann::json& j, Topology& t) {
  Topology d;
  t.n_tx = j.value("n_tx", d.n_tx);
  t.n_sub = j.value("n_sub", d.n_sub);
  t.width = j.value("width", d.width);
  t.kernel = j.value("kernel", d.kernel);
  t.latent_channels = j.value("latent_channels", d.latent_channels);
}

/// phi: encoder convs. theta: decoder convs followed by the latent prior.
struct Model {
  Topology topo;
  ParamSet phi;
  ParamSet theta;

  friend bool operator==(const Model&, const Model&) = default;
};

namespace detail {

inline void add_conv(ParamSet& ps, const std::string& name, std::size_t c_out, std::size_t c_in,
                     std::size_t k, Rng& rng) {
  Tensor w(Shape{c_out, c_in, k, k});
  const double std = std::sqrt(2.0 / static_cast<double>(c_in * k * k));
  for (auto& v : w.data()) v = std * rng.normal();
  ps.add(name + ".weight", std::move(w));
  ps.add(name + ".bias", Tensor(Shape{c_out}));
}

}  // namespace detail

inline Model init_model(const Topology& topo, std::uint64_t seed) {
  topo.validate();
  Model m;
  m.topo = topo;
  Rng rng(derive_seed(seed, 0xC0DEC));
  const std::size_t w = topo.width, k = topo.kernel, lc = topo.latent_channels;
  detail::add_conv(m.phi, "enc.conv0", w, 2, k, rng);
  detail::add_conv(m.phi, "enc.conv1", w, w, k, rng);
  detail::add_conv(m.phi, "enc.conv2", lc, w, k, rng);
  detail::add_conv(m.theta, "dec.conv0", w, lc, k, rng);
  detail::add_conv(m.theta, "dec.conv1", w, w, k, rng);
  detail::add_conv(m.theta, "dec.conv2", 2, w, k, rng);
  prior::add_initialized(m.theta, lc, rng);
  return m;
}

/// Checks that a parameter set has the canonical layout for `topo`.
inline void check_layout(const Model& m) {
  const Model ref = init_model(m.topo, 0);
  if (!m.phi.same_layout(ref.phi)) throw DimensionError("encoder parameters do not match topology");
  if (!m.theta.same_layout(ref.theta)) throw DimensionError("decoder parameters do not match topology");
}

inline Tensor encode_features(const Model& m, const Tensor& h) {
  if (h.shape() != m.topo.input_shape()) {
    throw DimensionError("CSI shape " + shape_string(h.shape()) + ", model expects " +
                         shape_string(m.topo.input_shape()));
  }
  const auto& p = m.phi.tensors;
  Tensor x = kernels::relu(kernels::conv2d(h, p[0], &p[1]));
  x = kernels::maxpool2d(x, 2).output;
  x = kernels::relu(kernels::conv2d(x, p[2], &p[3]));
  x = kernels::maxpool2d(x, 2).output;
  x = kernels::conv2d(x, p[4], &p[5]);
  ensure_finite(x, "encoder output");
  return x;
}

inline Tensor decode_features(const Model& m, const Tensor& z) {
  if (z.shape() != m.topo.latent_shape()) {
    throw DimensionError("latent shape " + shape_string(z.shape()) + ", model expects " +
                         shape_string(m.topo.latent_shape()));
  }
  const auto& p = m.theta.tensors;
  Tensor x = kernels::relu(kernels::conv2d(z, p[0], &p[1]));
  x = kernels::upsample_nearest2d(x, 2);
  x = kernels::relu(kernels::conv2d(x, p[2], &p[3]));
  x = kernels::upsample_nearest2d(x, 2);
  x = kernels::conv2d(x, p[4], &p[5]);
  ensure_finite(x, "decoder output");
  return x;
}

inline prior::View prior_view(const Model& m) { return prior::view_of(m.theta); }

/// Index of the first prior tensor inside theta.
inline constexpr std::size_t kPriorOffset = 6;

namespace ops {

inline std::vector<Var> register_params(GradTape& tape, const ParamSet& ps, std::size_t first_slot) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < ps.count(); ++i) out.push_back(tape.parameter(first_slot + i, ps.tensors[i]));
  return out;
}

inline std::vector<Var> register_constants(GradTape& tape, const ParamSet& ps) {
  std::vector<Var> out;
  for (const auto& t : ps.tensors) out.push_back(tape.constant(t));
  return out;
}

inline Var encode(GradTape& tape, Var h, const std::vector<Var>& phi) {
  Var x = relu(tape, conv2d(tape, h, phi[0], phi[1]));
  x = maxpool2(tape, x);
  x = relu(tape, conv2d(tape, x, phi[2], phi[3]));
  x = maxpool2(tape, x);
  return conv2d(tape, x, phi[4], phi[5]);
}

inline Var decode(GradTape& tape, Var z, const std::vector<Var>& theta) {
  Var x = relu(tape, conv2d(tape, z, theta[0], theta[1]));
  x = upsample2(tape, x);
  x = relu(tape, conv2d(tape, x, theta[2], theta[3]));
  x = upsample2(tape, x);
  return conv2d(tape, x, theta[4], theta[5]);
}

inline std::array<Var, prior::kTensorCount> prior_vars(const std::vector<Var>& theta) {
  std::array<Var, prior::kTensorCount> out;
  for (std::size_t k = 0; k < prior::kTensorCount; ++k) out[k] = theta[kPriorOffset + k];
  return out;
}

}  // namespace ops
}  // namespace csifb
