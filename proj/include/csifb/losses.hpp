// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "csifb/codec.hpp"
#include "csifb/latent.hpp"
#include "csifb/update.hpp"

namespace csifb {

/// Update-rate side of the RDM objective: theta is replaced on the forward
/// path by theta0 + Q_t(theta - theta0) and lambda_m * M(theta - theta0) is added.
struct UpdateTerm {
  const ParamSet* theta0 = nullptr;
  UpdateQuantizer quantizer;
  UpdatePrior prior;
  double lambda_m = 0.0;
  bool quantize = true;    // false: identity in place of Q_t (STE reference)
  bool rate_term = true;   // false: genie-aided, no update cost
};

struct Objective {
  double lambda = 1.0;
  bool train_phi = true;
  bool train_theta = true;
  std::optional<UpdateTerm> update;
};

struct LossTerms {
  double value = 0.0;
  double rate_bits = 0.0;   // mean latent bits per sample
  double distortion = 0.0;  // mean ||H_hat - H||^2
  double update_bits = 0.0;
};

struct LossGrad {
  LossTerms terms;
  std::vector<Tensor> phi;    // empty when !train_phi
  std::vector<Tensor> theta;  // empty when !train_theta
};

/// theta0 + Q_t(theta - theta0), elementwise in canonical order.
inline ParamSet quantized_theta(const ParamSet& theta, const ParamSet& theta0, const UpdateQuantizer& q) {
  if (!theta.same_layout(theta0)) throw DimensionError("theta and theta0 layouts differ");
  ParamSet out = theta0;
  for (std::size_t i = 0; i < theta.count(); ++i) {
    const Tensor& a = theta.tensors[i];
    Tensor& b = out.tensors[i];
    for (std::size_t k = 0; k < a.size(); ++k) b[k] = b[k] + q.quantize(a[k] - b[k]);
  }
  return out;
}

inline ParamSet apply_update(const ParamSet& theta0, const QuantizedUpdate& u) {
  if (u.size() != theta0.total_size()) {
    throw DimensionError("update has " + std::to_string(u.size()) + " entries, theta has " +
                         std::to_string(theta0.total_size()));
  }
  ParamSet out = theta0;
  std::size_t off = 0;
  for (auto& t : out.tensors) {
    for (auto& v : t.data()) v = v + u.value[off++];
  }
  return out;
}

inline std::vector<double> flat_delta(const ParamSet& theta, const ParamSet& theta0) {
  if (!theta.same_layout(theta0)) throw DimensionError("theta and theta0 layouts differ");
  std::vector<double> a = theta.flat();
  const std::vector<double> b = theta0.flat();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

/// Relaxed objective and its gradients on one batch. `noise` holds one
/// U(-1/2, 1/2) tensor per sample, shaped like the latent.
inline LossGrad rd_loss_grad(const Model& m, const std::vector<const Tensor*>& batch,
                             const std::vector<Tensor>& noise, const Objective& obj) {
  if (batch.empty() || noise.size() != batch.size()) throw ConfigError("batch and noise sizes differ or are empty");
  const UpdateTerm* up = obj.update ? &*obj.update : nullptr;
  const ParamSet* theta_fwd = &m.theta;
  ParamSet theta_bar;
  if (up && up->quantize) {
    theta_bar = quantized_theta(m.theta, *up->theta0, up->quantizer);
    theta_fwd = &theta_bar;
  }

  GradTape tape;
  const std::size_t n_phi = m.phi.count();
  const auto phi = obj.train_phi ? ops::register_params(tape, m.phi, 0) : ops::register_constants(tape, m.phi);
  const auto theta = obj.train_theta ? ops::register_params(tape, *theta_fwd, n_phi)
                                     : ops::register_constants(tape, *theta_fwd);
  const auto pvars = ops::prior_vars(theta);

  std::vector<Var> terms;
  double rate_sum = 0.0, dist_sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Var h = tape.constant(*batch[b]);
    const Var z = ops::encode(tape, h, phi);
    const Var zt = ops::add_constant(tape, z, noise[b]);
    const Var rate = ops::latent_rate(tape, zt, pvars);
    const Var hh = ops::decode(tape, zt, theta);
    const Var dist = ops::squared_error(tape, hh, *batch[b]);
    rate_sum += tape.scalar(rate);
    dist_sum += tape.scalar(dist);
    terms.push_back(ops::add(tape, rate, ops::scale(tape, dist, obj.lambda)));
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const Var loss = ops::scale(tape, ops::add_all(tape, terms), inv_b);

  LossGrad out;
  out.terms.rate_bits = rate_sum * inv_b;
  out.terms.distortion = dist_sum * inv_b;
  out.terms.value = tape.scalar(loss);

  if (obj.train_phi || obj.train_theta) {
    const Gradients g = tape.backward(loss);
    if (obj.train_phi) {
      for (std::size_t i = 0; i < n_phi; ++i) out.phi.push_back(g.at(i));
    }
    if (obj.train_theta) {
      for (std::size_t i = 0; i < m.theta.count(); ++i) out.theta.push_back(g.at(n_phi + i));
    }
  }

  if (up && up->rate_term) {
    const auto delta = flat_delta(m.theta, *up->theta0);
    const SurrogateRate s = update_surrogate(delta, up->prior, up->quantizer);
    out.terms.update_bits = s.bits;
    out.terms.value += up->lambda_m * s.bits;
    if (obj.train_theta) {
      std::size_t off = 0;
      for (auto& t : out.theta) {
        for (auto& v : t.data()) v += up->lambda_m * s.grad[off++];
      }
    }
  }
  if (!std::isfinite(out.terms.value)) throw NumericalError("non-finite training loss");
  return out;
}

/// Per-sample evaluation at coding time.
struct SampleEval {
  Tensor zbar;
  Tensor h_hat;
  double rate_bits = 0.0;    // discrete estimate under the coding pmfs
  double distortion = 0.0;   // ||H_hat - H||^2
  double nmse = 0.0;         // ||H_hat - H||^2 / ||H||^2
};

inline SampleEval evaluate_sample(const Model& m, const LatentTables& tables, const Tensor& h) {
  SampleEval e;
  e.zbar = quantize_unit(encode_features(m, h));
  e.rate_bits = discrete_rate_bits(e.zbar, tables);
  e.h_hat = decode_features(m, dequantize(e.zbar));
  e.distortion = (e.h_hat - h).squared_norm();
  const double p = h.squared_norm();
  e.nmse = p > 0.0 ? e.distortion / p : 0.0;
  return e;
}

/// Hard-quantized objective: mean(rate + lambda D) [+ lambda_m * discrete update bits].
inline LossTerms discrete_objective(const Model& m, const std::vector<const Tensor*>& data, const Objective& obj) {
  LossTerms out;
  if (data.empty()) return out;
  Model eff = m;
  const UpdateTerm* up = obj.update ? &*obj.update : nullptr;
  if (up && up->quantize) eff.theta = quantized_theta(m.theta, *up->theta0, up->quantizer);
  const LatentTables tables = LatentTables::from_prior(prior_view(eff));
  for (const Tensor* h : data) {
    const SampleEval e = evaluate_sample(eff, tables, *h);
    out.rate_bits += e.rate_bits;
    out.distortion += e.distortion;
  }
  out.rate_bits /= static_cast<double>(data.size());
  out.distortion /= static_cast<double>(data.size());
  out.value = out.rate_bits + obj.lambda * out.distortion;
  if (up && up->rate_term) {
    const auto u = quantize_update(flat_delta(m.theta, *up->theta0), up->quantizer);
    out.update_bits = update_rate_bits(u, up->prior, up->quantizer);
    out.value += up->lambda_m * out.update_bits;
  }
  return out;
}

inline double to_db(double ratio) { return 10.0 * std::log10(ratio); }

}  // namespace csifb
