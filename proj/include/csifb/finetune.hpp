// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csifb/adam.hpp"
#include "csifb/bitstream.hpp"
#include "csifb/channel.hpp"
#include "csifb/checkpoint.hpp"
#include "csifb/losses.hpp"

namespace csifb {

enum class Mode { kBackbone, kNoFinetune, kEncoderOnly, kFullModel, kGenieAided };

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::kBackbone: return "backbone";
    case Mode::kNoFinetune: return "no_ft";
    case Mode::kEncoderOnly: return "encoder_only";
    case Mode::kFullModel: return "full_model";
    case Mode::kGenieAided: return "genie_aided";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "backbone") return Mode::kBackbone;
  if (s == "no_ft" || s == "none" || s == "noft") return Mode::kNoFinetune;
  if (s == "encoder_only" || s == "eo") return Mode::kEncoderOnly;
  if (s == "full_model" || s == "fm") return Mode::kFullModel;
  if (s == "genie_aided" || s == "ga") return Mode::kGenieAided;
  throw ConfigError("unknown mode '" + s + "'");
}

struct TrainConfig {
  double lambda = 1.0;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  Mode mode = Mode::kBackbone;
  UpdateQuantizer quantizer = UpdateQuantizer::make(0.005, 50);
  UpdatePrior update_prior = UpdatePrior::spike_slab(0.05, 1000.0, 0.005);
  std::optional<double> lambda_m;  // defaults to lambda
  std::size_t patience = 100;
  double holdout = 0.2;            // fine-tuning validation slice

  double update_weight() const { return lambda_m.value_or(lambda); }

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout must be in [0, 1)");
    if (lambda_m && !(*lambda_m >= 0.0)) throw ConfigError("lambda_m must be non-negative");
    if (mode == Mode::kFullModel) {
      quantizer.validate();
      update_prior.validate();
      if (std::abs(quantizer.t - update_prior.t) > 1e-12) {
        throw ConfigError("update prior t differs from quantizer t");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},   {"lr", c.lr},         {"batch", c.batch},
                     {"epochs", c.epochs},   {"seed", c.seed},     {"mode", mode_name(c.mode)},
                     {"quantizer", c.quantizer}, {"update_prior", c.update_prior},
                     {"patience", c.patience}, {"holdout", c.holdout}};
  if (c.lambda_m) j["lambda_m"] = *c.lambda_m;
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lambda = j.value("lambda", d.lambda);
  c.lr = j.value("lr", d.lr);
  c.batch = j.value("batch", d.batch);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.mode = parse_mode(j.value("mode", mode_name(d.mode)));
  c.quantizer = j.contains("quantizer") ? j["quantizer"].get<UpdateQuantizer>() : d.quantizer;
  c.update_prior = j.contains("update_prior") ? j["update_prior"].get<UpdatePrior>() : d.update_prior;
  if (j.contains("lambda_m") && !j["lambda_m"].is_null()) c.lambda_m = j["lambda_m"].get<double>();
  c.patience = j.value("patience", d.patience);
  c.holdout = j.value("holdout", d.holdout);
}

/// Per-epoch record of a training run.
struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::size_t nonzero_updates = 0;  // full-model runs only
};

struct TrainResult {
  Model best;
  Model last;
  TrainState state;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

/// Called after every epoch with the live state; used for checkpointing.
using EpochHook = std::function<void(const Model& current, const TrainState& state, const Model& best)>;

namespace detail {

inline std::vector<const Tensor*> pointers(const std::vector<Tensor>& v) {
  std::vector<const Tensor*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

inline void check_finite_params(const Model& m) {
  for (const auto& t : m.phi.tensors) ensure_finite(t, "encoder parameter");
  for (const auto& t : m.theta.tensors) ensure_finite(t, "decoder parameter");
}

}  // namespace detail

/// Mini-batch Adam on `obj`, with best-on-validation selection and patience.
/// Epoch e draws its shuffle and noise from derive_seed(seed, e), so a run
/// resumed from (params, Adam state, epoch) continues bit-identically.
inline TrainResult train_loop(const Model& start, const std::vector<const Tensor*>& train,
                              const std::vector<const Tensor*>& val, const Objective& obj,
                              const TrainConfig& cfg, const std::optional<TrainState>& resume = std::nullopt,
                              const std::optional<Model>& resume_best = std::nullopt,
                              const EpochHook& hook = nullptr) {
  cfg.validate();
  TrainResult res;
  res.last = start;
  Model& cur = res.last;
  if (resume) res.state = *resume;
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  const bool has_val = !val.empty();

  if (resume && resume_best) {
    res.best = *resume_best;
  } else {
    res.best = cur;
    res.state.best_val = has_val ? discrete_objective(cur, val, obj).value : 0.0;
  }
  std::size_t since_best = 0;

  if (train.empty()) return res;
  for (std::size_t epoch = res.state.epoch; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, epoch));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
      std::vector<const Tensor*> batch;
      std::vector<Tensor> noise;
      for (std::size_t i = b0; i < b1; ++i) {
        batch.push_back(train[order[i]]);
        noise.push_back(uniform_noise(cur.topo.latent_shape(), rng));
      }
      const LossGrad lg = rd_loss_grad(cur, batch, noise, obj);
      if (obj.train_phi) adam_step(cur.phi.tensors, lg.phi, res.state.adam_phi, adam);
      if (obj.train_theta) adam_step(cur.theta.tensors, lg.theta, res.state.adam_theta, adam);
      loss_sum += lg.terms.value;
      ++batches;
    }
    detail::check_finite_params(cur);
    res.state.epoch = epoch + 1;
    EpochLog log{epoch + 1, loss_sum / static_cast<double>(batches), 0.0, 0};
    if (obj.update) {
      log.nonzero_updates = quantize_update(flat_delta(cur.theta, *obj.update->theta0), obj.update->quantizer).nonzero();
    }
    if (has_val) {
      log.val_loss = discrete_objective(cur, val, obj).value;
      if (!std::isfinite(log.val_loss)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
      if (log.val_loss < res.state.best_val) {
        res.state.best_val = log.val_loss;
        res.best = cur;
        res.best_epoch = epoch + 1;
        since_best = 0;
      } else {
        ++since_best;
      }
    } else {
      res.best = cur;
      res.best_epoch = epoch + 1;
    }
    res.log.push_back(log);
    if (hook) hook(cur, res.state, res.best);
    if (has_val && since_best >= cfg.patience) break;
  }
  return res;
}

/// Backbone training from a fresh initialization on the relaxed RD loss.
inline TrainResult train_backbone(const Topology& topo, const CsiDataset& train, const CsiDataset& val,
                                  const TrainConfig& cfg, const EpochHook& hook = nullptr) {
  Objective obj;
  obj.lambda = cfg.lambda;
  const Model start = init_model(topo, cfg.seed);
  return train_loop(start, detail::pointers(train.samples), detail::pointers(val.samples), obj, cfg,
                    std::nullopt, std::nullopt, hook);
}

inline TrainResult resume_backbone(const Model& current, const TrainState& state, const Model& best,
                                   const CsiDataset& train, const CsiDataset& val, const TrainConfig& cfg,
                                   const EpochHook& hook = nullptr) {
  Objective obj;
  obj.lambda = cfg.lambda;
  return train_loop(current, detail::pointers(train.samples), detail::pointers(val.samples), obj, cfg,
                    state, best, hook);
}

struct FinetuneResult {
  Mode mode = Mode::kNoFinetune;
  Model trained;   // (phi*, theta*) as optimized
  Model decoder;   // what the receiver uses: theta0, theta0 + Q_t(delta), or theta*
  std::optional<QuantizedUpdate> update;
  Bytes update_section;  // empty unless full-model
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

inline Objective objective_for(const TrainConfig& cfg, const ParamSet* theta0) {
  Objective obj;
  obj.lambda = cfg.lambda;
  switch (cfg.mode) {
    case Mode::kEncoderOnly:
      obj.train_theta = false;
      break;
    case Mode::kFullModel:
      obj.update = UpdateTerm{theta0, cfg.quantizer, cfg.update_prior, cfg.update_weight(), true, true};
      break;
    case Mode::kNoFinetune:
      obj.train_phi = false;
      obj.train_theta = false;
      break;
    default:
      break;
  }
  return obj;
}

/// Fine-tunes `base` on H_T according to cfg.mode. The trailing `holdout`
/// fraction of H_T drives early stopping.
inline FinetuneResult finetune(const Model& base, const std::vector<const Tensor*>& h_t, const TrainConfig& cfg) {
  cfg.validate();
  FinetuneResult out;
  out.mode = cfg.mode;
  if (cfg.mode == Mode::kBackbone) throw ConfigError("finetune() needs a fine-tuning mode");
  if (cfg.mode == Mode::kNoFinetune) {
    out.trained = base;
    out.decoder = base;
    return out;
  }
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.holdout * static_cast<double>(h_t.size())));
  if (h_t.size() - n_val < 1) n_val = 0;
  const std::vector<const Tensor*> train(h_t.begin(), h_t.end() - static_cast<std::ptrdiff_t>(n_val));
  const std::vector<const Tensor*> val(h_t.end() - static_cast<std::ptrdiff_t>(n_val), h_t.end());

  const Objective obj = objective_for(cfg, &base.theta);
  TrainResult tr = train_loop(base, train, val, obj, cfg);
  out.trained = std::move(tr.best);
  out.log = std::move(tr.log);
  out.best_epoch = tr.best_epoch;
  out.decoder = out.trained;
  switch (cfg.mode) {
    case Mode::kEncoderOnly:
      out.decoder = base;
      out.decoder.phi = out.trained.phi;
      break;
    case Mode::kFullModel: {
      auto u = quantize_update(flat_delta(out.trained.theta, base.theta), cfg.quantizer);
      out.decoder.theta = apply_update(base.theta, u);
      out.update_section = encode_update(u, cfg.update_prior, cfg.quantizer);
      out.update = std::move(u);
      break;
    }
    default:
      break;
  }
  return out;
}

/// Rates are bits per CSI element (per N_t * N_c).
struct RdPoint {
  double rate_total = 0.0;
  double rate_latent = 0.0;
  double rate_update = 0.0;
  double nmse_db = 0.0;

  static RdPoint make(double latent, double update, double nmse_db) {
    return RdPoint{latent + update, latent, update, nmse_db};
  }
};

inline void to_json(nlohmann::json& j, const RdPoint& p) {
  j = nlohmann::json{{"rate_total", p.rate_total},
                     {"rate_latent", p.rate_latent},
                     {"rate_update", p.rate_update},
                     {"nmse_db", p.nmse_db}};
}

struct SessionResult {
  Mode mode = Mode::kNoFinetune;
  std::size_t window_begin = 0;  // stream index of the first fine-tuning sample
  std::size_t eval_begin = 0;    // stream index of the first evaluated sample
  std::vector<RdPoint> per_sample;
  std::vector<double> nmse;       // linear, per sample
  std::vector<std::size_t> latent_bytes;
  std::vector<Bitstream> streams;
  std::vector<Tensor> h_hat;
  RdPoint aggregate;
  std::size_t update_bytes = 0;   // full section length, header included
  double update_entropy_bits = 0.0;
  std::size_t nonzero_updates = 0;
  std::size_t theta_len = 0;
  FinetuneResult finetune;
};

/// Codes `eval` with the fine-tuned encoder and the receiver-side decoder.
/// The update section rides in the first sample's bitstream and its bits are
/// spread evenly across all evaluated samples.
inline SessionResult evaluate_session(FinetuneResult ft, const std::vector<const Tensor*>& eval,
                                      const TrainConfig& cfg) {
  if (eval.empty()) throw ConfigError("evaluation slice is empty");
  SessionResult s;
  s.mode = ft.mode;
  s.theta_len = ft.decoder.theta.total_size();
  Model coder = ft.decoder;  // receiver parameters with the sender's encoder
  coder.phi = ft.trained.phi;
  const LatentTables tables = LatentTables::from_prior(prior_view(coder));
  const double elems = static_cast<double>(coder.topo.elements());
  s.update_bytes = ft.update_section.size();
  if (ft.update) {
    s.nonzero_updates = ft.update->nonzero();
    s.update_entropy_bits = update_rate_bits(*ft.update, cfg.update_prior, cfg.quantizer);
  }
  const double rate_update = 8.0 * static_cast<double>(s.update_bytes) / (static_cast<double>(eval.size()) * elems);
  double nmse_sum = 0.0, latent_sum = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    SampleEval e = evaluate_sample(coder, tables, *eval[i]);
    Bitstream bs;
    if (i == 0 && !ft.update_section.empty()) bs.sections.push_back({SectionId::kModelUpdate, ft.update_section});
    bs.sections.push_back({SectionId::kLatent, entropy_encode(e.zbar, tables)});
    s.latent_bytes.push_back(bs.payload_bytes(SectionId::kLatent));
    const double rate_latent = e.rate_bits / elems;
    s.per_sample.push_back(RdPoint::make(rate_latent, rate_update, to_db(e.nmse)));
    s.nmse.push_back(e.nmse);
    s.streams.push_back(std::move(bs));
    s.h_hat.push_back(std::move(e.h_hat));
    nmse_sum += e.nmse;
    latent_sum += rate_latent;
  }
  const double n = static_cast<double>(eval.size());
  s.aggregate = RdPoint::make(latent_sum / n, rate_update, to_db(nmse_sum / n));
  s.finetune = std::move(ft);
  return s;
}

inline SessionResult run_session(const Model& base, const std::vector<const Tensor*>& h_t,
                                 const std::vector<const Tensor*>& eval, const TrainConfig& cfg) {
  return evaluate_session(finetune(base, h_t, cfg), eval, cfg);
}

/// Splits the stream into consecutive windows of `interval` samples; each
/// window fine-tunes on its first `ft_samples` and evaluates the rest. A
/// trailing window too short to evaluate anything is dropped.
inline std::vector<SessionResult> schedule(const Model& base, const CsiDataset& stream, std::size_t interval,
                                           std::size_t ft_samples, const TrainConfig& cfg) {
  if (interval <= ft_samples) throw ConfigError("interval must exceed the fine-tuning slice size");
  if (stream.size() <= ft_samples) throw ConfigError("stream shorter than one fine-tuning slice");
  std::vector<SessionResult> out;
  for (std::size_t w = 0; w + ft_samples < stream.size(); w += interval) {
    const std::size_t end = std::min(stream.size(), w + interval);
    std::vector<const Tensor*> h_t, eval;
    for (std::size_t i = w; i < w + ft_samples; ++i) h_t.push_back(&stream.samples[i]);
    for (std::size_t i = w + ft_samples; i < end; ++i) eval.push_back(&stream.samples[i]);
    TrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, w);
    SessionResult s = run_session(base, h_t, eval, c);
    s.window_begin = w;
    s.eval_begin = w + ft_samples;
    out.push_back(std::move(s));
  }
  return out;
}

/// Sample-weighted mean over sessions.
inline RdPoint aggregate(const std::vector<SessionResult>& sessions) {
  double lat = 0.0, upd = 0.0, nmse = 0.0;
  std::size_t n = 0;
  for (const auto& s : sessions) {
    for (std::size_t i = 0; i < s.per_sample.size(); ++i) {
      lat += s.per_sample[i].rate_latent;
      upd += s.per_sample[i].rate_update;
      nmse += s.nmse[i];
      ++n;
    }
  }
  if (n == 0) return {};
  const double d = static_cast<double>(n);
  return RdPoint::make(lat / d, upd / d, to_db(nmse / d));
}

/// Receiver: reconstructs H_hat from one bitstream. `theta` carries state
/// across calls: a model-update section replaces it with theta0 + delta_bar.
struct Receiver {
  Model base;  // theta0 (and an unused encoder)
  UpdateQuantizer quantizer;
  UpdatePrior update_prior;
  Model current;

  Receiver(Model b, UpdateQuantizer q, UpdatePrior p)
      : base(std::move(b)), quantizer(q), update_prior(p), current(base) {}

  Tensor decode(const Bitstream& bs) {
    if (const Section* up = bs.find(SectionId::kModelUpdate)) {
      const auto u = decode_update(up->payload, update_prior, quantizer, base.theta.total_size());
      current.theta = apply_update(base.theta, u);
    }
    const Section* lat = bs.find(SectionId::kLatent);
    if (!lat) throw FormatError("bitstream has no latent section", 0);
    const LatentTables tables = LatentTables::from_prior(prior_view(current));
    const Tensor zbar = entropy_decode(lat->payload, tables, current.topo.latent_shape());
    return decode_features(current, dequantize(zbar));
  }
};

}  // namespace csifb
