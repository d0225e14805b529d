// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "csifb/rng.hpp"
#include "csifb/tape.hpp"
#include "csifb/tensor.hpp"

namespace csifb {

/// Per-channel monotone CDF network ("deep factorized" density). Each channel
/// maps x through stacked scalar-width affine layers with softplus-positive
/// matrices and tanh gates; sigmoid of the final value is the CDF.
namespace prior {

inline constexpr std::size_t kLayers = 4;
inline constexpr std::array<std::size_t, kLayers + 1> kFilters{1, 3, 3, 3, 1};
inline constexpr std::size_t kMaxWidth = 3;
inline constexpr std::size_t kTensorCount = 3 * kLayers - 1;  // matrices, biases, factors

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline std::string matrix_name(std::size_t i) { return "prior.matrix" + std::to_string(i); }
inline std::string bias_name(std::size_t i) { return "prior.bias" + std::to_string(i); }
inline std::string factor_name(std::size_t i) { return "prior.factor" + std::to_string(i); }

/// Canonical tensor order: matrix0, bias0, factor0, ..., matrix3, bias3.
inline std::vector<std::string> tensor_names() {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kLayers; ++i) {
    out.push_back(matrix_name(i));
    out.push_back(bias_name(i));
    if (i + 1 < kLayers) out.push_back(factor_name(i));
  }
  return out;
}

/// Appends freshly initialized prior tensors to `params`. The initial CDF is a
/// logistic of scale ~10 centred on zero.
inline void add_initialized(ParamSet& params, std::size_t channels, Rng& rng) {
  const double init_scale = 10.0;
  const double scale = std::pow(init_scale, 1.0 / static_cast<double>(kLayers));
  std::vector<Tensor> matrices, biases, factors;
  for (std::size_t i = 0; i < kLayers; ++i) {
    const std::size_t fi = kFilters[i], fo = kFilters[i + 1];
    const double m0 = std::log(std::expm1(1.0 / scale / static_cast<double>(fo)));
    matrices.emplace_back(Shape{channels, fo, fi}, m0);
    Tensor b(Shape{channels, fo});
    for (auto& v : b.data()) v = rng.uniform(-0.5, 0.5);
    biases.push_back(std::move(b));
    if (i + 1 < kLayers) factors.emplace_back(Shape{channels, fo}, 0.0);
  }
  // With zero gates the network is affine; shift the last bias so logit(0) = 0.
  for (std::size_t c = 0; c < channels; ++c) {
    std::array<double, kMaxWidth> v{0.0};
    std::size_t width = 1;
    for (std::size_t i = 0; i < kLayers; ++i) {
      const std::size_t fo = kFilters[i + 1];
      std::array<double, kMaxWidth> h{};
      for (std::size_t r = 0; r < fo; ++r) {
        double acc = biases[i][c * fo + r];
        for (std::size_t q = 0; q < width; ++q) {
          acc += softplus(matrices[i][(c * fo + r) * width + q]) * v[q];
        }
        h[r] = acc;
      }
      v = h;
      width = fo;
    }
    biases[kLayers - 1][c] -= v[0];
  }
  for (std::size_t i = 0; i < kLayers; ++i) {
    params.add(matrix_name(i), std::move(matrices[i]));
    params.add(bias_name(i), std::move(biases[i]));
    if (i + 1 < kLayers) params.add(factor_name(i), std::move(factors[i]));
  }
}

/// Read-only view of the prior tensors in canonical order.
struct View {
  std::array<const Tensor*, kTensorCount> t{};

  const Tensor& matrix(std::size_t i) const { return *t[3 * i]; }
  const Tensor& bias(std::size_t i) const { return *t[3 * i + 1]; }
  const Tensor& factor(std::size_t i) const { return *t[3 * i + 2]; }
  std::size_t channels() const { return t[0]->dim(0); }
};

inline View view_of(const ParamSet& params) {
  View v;
  const auto names = tensor_names();
  for (std::size_t k = 0; k < kTensorCount; ++k) v.t[k] = &params.tensors[params.index_of(names[k])];
  for (std::size_t i = 0; i < kLayers; ++i) {
    const std::size_t c = v.channels(), fi = kFilters[i], fo = kFilters[i + 1];
    if (v.matrix(i).shape() != Shape{c, fo, fi} || v.bias(i).shape() != Shape{c, fo} ||
        (i + 1 < kLayers && v.factor(i).shape() != Shape{c, fo})) {
      throw DimensionError("prior layer " + std::to_string(i) + " has inconsistent shapes");
    }
  }
  return v;
}

/// Activations saved by a forward evaluation, enough to backpropagate.
struct Trace {
  std::array<std::array<double, kMaxWidth>, kLayers> in{};   // layer inputs
  std::array<std::array<double, kMaxWidth>, kLayers> pre{};  // affine outputs before the gate
  double logit = 0.0;
};

inline double logit(const View& p, std::size_t c, double x, Trace* trace = nullptr) {
  std::array<double, kMaxWidth> v{x};
  std::size_t width = 1;
  for (std::size_t i = 0; i < kLayers; ++i) {
    const std::size_t fo = kFilters[i + 1];
    const double* m = p.matrix(i).raw() + c * fo * width;
    const double* b = p.bias(i).raw() + c * fo;
    std::array<double, kMaxWidth> h{};
    for (std::size_t r = 0; r < fo; ++r) {
      double acc = b[r];
      for (std::size_t q = 0; q < width; ++q) acc += softplus(m[r * width + q]) * v[q];
      h[r] = acc;
    }
    if (trace) {
      trace->in[i] = v;
      trace->pre[i] = h;
    }
    if (i + 1 < kLayers) {
      const double* a = p.factor(i).raw() + c * fo;
      for (std::size_t r = 0; r < fo; ++r) h[r] += std::tanh(a[r]) * std::tanh(h[r]);
    }
    v = h;
    width = fo;
  }
  if (trace) trace->logit = v[0];
  return v[0];
}

/// Accumulates d(logit)/d(params) * g into `grads` (canonical order, shaped
/// like the prior tensors) and returns d(logit)/dx * g.
inline double logit_backward(const View& p, std::size_t c, const Trace& tr, double g,
                             std::array<Tensor, kTensorCount>& grads) {
  std::array<double, kMaxWidth> gv{g};
  for (std::size_t i = kLayers; i-- > 0;) {
    const std::size_t fi = kFilters[i], fo = kFilters[i + 1];
    std::array<double, kMaxWidth> gh{};
    if (i + 1 < kLayers) {
      const double* a = p.factor(i).raw() + c * fo;
      double* ga = grads[3 * i + 2].raw() + c * fo;
      for (std::size_t r = 0; r < fo; ++r) {
        const double ta = std::tanh(a[r]);
        const double th = std::tanh(tr.pre[i][r]);
        gh[r] = gv[r] * (1.0 + ta * (1.0 - th * th));
        ga[r] += gv[r] * th * (1.0 - ta * ta);
      }
    } else {
      for (std::size_t r = 0; r < fo; ++r) gh[r] = gv[r];
    }
    const double* m = p.matrix(i).raw() + c * fo * fi;
    double* gm = grads[3 * i].raw() + c * fo * fi;
    double* gb = grads[3 * i + 1].raw() + c * fo;
    std::array<double, kMaxWidth> gin{};
    for (std::size_t r = 0; r < fo; ++r) {
      gb[r] += gh[r];
      for (std::size_t q = 0; q < fi; ++q) {
        gm[r * fi + q] += gh[r] * tr.in[i][q] * sigmoid(m[r * fi + q]);
        gin[q] += softplus(m[r * fi + q]) * gh[r];
      }
    }
    gv = gin;
  }
  return gv[0];
}

inline double cdf(const View& p, std::size_t c, double x) { return sigmoid(logit(p, c, x)); }

/// Mass of [lower, upper] computed in whichever tail keeps precision.
inline double interval_mass(double l_lo, double l_hi) {
  const double s = (l_lo + l_hi) > 0.0 ? -1.0 : 1.0;
  return std::abs(sigmoid(s * l_hi) - sigmoid(s * l_lo));
}

inline double bin_mass(const View& p, std::size_t c, double y) {
  return interval_mass(logit(p, c, y - 0.5), logit(p, c, y + 0.5));
}

}  // namespace prior

inline constexpr int kLatentAlphabet = 255;        // symbols in [-A, A]
inline constexpr double kPmfFloor = 1.0 / 65536.0;  // 2^-16
inline constexpr double kLikelihoodBound = 1e-9;   // training-time lower bound

/// Floors every entry at `floor` and rescales the others so the result sums
/// to one with every entry still >= floor.
inline std::vector<double> floor_and_normalize(std::vector<double> p, double floor) {
  if (floor * static_cast<double>(p.size()) >= 1.0) throw ConfigError("pmf floor too large for alphabet");
  std::vector<bool> pinned(p.size(), false);
  for (int iter = 0; iter < 64; ++iter) {
    double free_mass = 0.0;
    std::size_t n_pinned = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (pinned[i]) {
        ++n_pinned;
      } else {
        free_mass += p[i];
      }
    }
    const double target = 1.0 - floor * static_cast<double>(n_pinned);
    bool changed = false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (pinned[i]) {
        p[i] = floor;
      } else {
        p[i] = free_mass > 0.0 ? p[i] * target / free_mass
                               : target / static_cast<double>(p.size() - n_pinned);
        if (p[i] < floor) {
          pinned[i] = true;
          changed = true;
        }
      }
    }
    if (!changed) return p;
  }
  throw NumericalError("floor_and_normalize did not converge");
}

/// Coding pmf of one latent channel over [-A, A]: CDF differences, floored, renormalized.
inline std::vector<double> latent_pmf(const prior::View& p, std::size_t channel,
                                      int alphabet = kLatentAlphabet, double floor = kPmfFloor) {
  std::vector<double> raw(static_cast<std::size_t>(2 * alphabet + 1));
  double l_prev = prior::logit(p, channel, -alphabet - 0.5);
  for (int k = -alphabet; k <= alphabet; ++k) {
    const double l_next = prior::logit(p, channel, k + 0.5);
    raw[static_cast<std::size_t>(k + alphabet)] = prior::interval_mass(l_prev, l_next);
    l_prev = l_next;
  }
  return floor_and_normalize(std::move(raw), floor);
}

inline std::vector<std::vector<double>> latent_pmfs(const prior::View& p,
                                                    int alphabet = kLatentAlphabet) {
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < p.channels(); ++c) out.push_back(latent_pmf(p, c, alphabet));
  return out;
}

/// -sum log2 p(y) over y in [C, ...] using CDF differences at y +- 1/2 and the
/// training lower bound on the likelihood. Used for both the noisy and the
/// hard-rounded latent.
inline double relaxed_rate_bits(const prior::View& p, const Tensor& y) {
  if (y.rank() < 1 || y.dim(0) != p.channels()) {
    throw DimensionError("latent has " + shape_string(y.shape()) + ", prior has " +
                         std::to_string(p.channels()) + " channels");
  }
  const std::size_t per = y.size() / y.dim(0);
  double bits = 0.0;
  for (std::size_t c = 0; c < p.channels(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      const double v = y[c * per + i];
      bits -= std::log2(std::max(prior::bin_mass(p, c, v), kLikelihoodBound));
    }
  }
  return bits;
}

namespace ops {

/// Relaxed latent rate in bits as a differentiable function of the latent and
/// the prior tensors. Below the likelihood bound the gradient still flows, as
/// if the bound were not there.
inline Var latent_rate(GradTape& tape, Var latent, const std::array<Var, prior::kTensorCount>& prior_vars) {
  auto make_view = [prior_vars](const GradTape& t) {
    prior::View v;
    for (std::size_t k = 0; k < prior::kTensorCount; ++k) v.t[k] = &t.value(prior_vars[k]);
    return v;
  };
  const double bits = relaxed_rate_bits(make_view(tape), tape.value(latent));
  std::vector<Var> inputs{latent};
  inputs.insert(inputs.end(), prior_vars.begin(), prior_vars.end());
  return tape.record(Tensor::scalar(bits), std::span<const Var>(inputs),
                     [=](GradTape& t, const Tensor& g) {
                       const prior::View pv = make_view(t);
                       const Tensor& y = t.value(latent);
                       const std::size_t per = y.size() / y.dim(0);
                       std::array<Tensor, prior::kTensorCount> gp;
                       for (std::size_t k = 0; k < prior::kTensorCount; ++k) gp[k] = Tensor(pv.t[k]->shape());
                       Tensor gy(y.shape());
                       const double scale = -g[0] / std::log(2.0);
                       prior::Trace lo, hi;
                       for (std::size_t c = 0; c < pv.channels(); ++c) {
                         for (std::size_t i = 0; i < per; ++i) {
                           const double v = y[c * per + i];
                           const double l_lo = prior::logit(pv, c, v - 0.5, &lo);
                           const double l_hi = prior::logit(pv, c, v + 0.5, &hi);
                           const double s = (l_lo + l_hi) > 0.0 ? -1.0 : 1.0;
                           const double sh = prior::sigmoid(s * l_hi), sl = prior::sigmoid(s * l_lo);
                           const double diff = sh - sl;
                           const double mass = std::max(std::abs(diff), kLikelihoodBound);
                           const double sign = diff >= 0.0 ? 1.0 : -1.0;
                           // d mass / d l = sign * s * sigmoid'(s l)
                           const double k = scale / mass * sign * s;
                           const double g_hi = k * sh * (1.0 - sh);
                           const double g_lo = -k * sl * (1.0 - sl);
                           gy[c * per + i] = prior::logit_backward(pv, c, hi, g_hi, gp) +
                                             prior::logit_backward(pv, c, lo, g_lo, gp);
                         }
                       }
                       t.accumulate(latent, std::move(gy));
                       for (std::size_t k = 0; k < prior::kTensorCount; ++k) {
                         t.accumulate(prior_vars[k], std::move(gp[k]));
                       }
                     });
}

}  // namespace ops
}  // namespace csifb
