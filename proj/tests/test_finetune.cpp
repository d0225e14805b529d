// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "csifb/checkpoint.hpp"
#include "csifb/finetune.hpp"

using namespace csifb;

namespace {

ChannelConfig toy_channel(std::uint64_t seed) {
  ChannelConfig c;
  c.n_tx = 8;
  c.n_sub = 8;
  c.n_paths = 3;
  c.angle_spread = 0.05;
  c.bandwidth = 25e6;
  c.seed = seed;
  return c;
}

CsiDataset toy_data(std::uint64_t seed, std::size_t n, double angle = 0.0) {
  auto c = toy_channel(seed);
  c.mean_angle = angle;
  return normalize(generate(c, n));
}

const Topology kTopo{8, 8, 4, 3, 1};

TrainConfig toy_cfg(Mode mode, std::size_t epochs) {
  TrainConfig c;
  c.lambda = 3.0;
  c.lr = 3e-3;
  c.batch = 4;
  c.epochs = epochs;
  c.seed = 11;
  c.mode = mode;
  c.lambda_m = 0.01;
  return c;
}

const Model& base_model() {
  static const Model m = [] {
    const auto d = toy_data(1, 40);
    auto cfg = toy_cfg(Mode::kBackbone, 4);
    return train_backbone(kTopo, d, CsiDataset{}, cfg).best;
  }();
  return m;
}

}  // namespace

TEST_CASE("training lowers the loss on a toy set", "[finetune]") {
  const auto d = toy_data(2, 32);
  const auto r = train_backbone(kTopo, d, CsiDataset{}, toy_cfg(Mode::kBackbone, 8));
  REQUIRE(r.log.size() == 8);
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
}

TEST_CASE("zero epochs leave every mode at the backbone", "[finetune]") {
  const auto shifted = toy_data(3, 20, 0.3);
  const auto h_t = detail::pointers(shifted.samples);
  const Model& base = base_model();
  for (Mode m : {Mode::kNoFinetune, Mode::kEncoderOnly, Mode::kFullModel, Mode::kGenieAided}) {
    const auto ft = finetune(base, h_t, toy_cfg(m, 0));
    CHECK(ft.trained == base);
    CHECK(ft.decoder == base);
  }
  const auto fm = finetune(base, h_t, toy_cfg(Mode::kFullModel, 0));
  REQUIRE(fm.update);
  CHECK(fm.update->nonzero() == 0);
}

TEST_CASE("no fine-tuning sends no update and genie-aided at zero epochs matches it", "[finetune]") {
  const auto shifted = toy_data(4, 30, 0.3);
  const auto all = detail::pointers(shifted.samples);
  const std::vector<const Tensor*> h_t(all.begin(), all.begin() + 20), eval(all.begin() + 20, all.end());
  const auto none = run_session(base_model(), h_t, eval, toy_cfg(Mode::kNoFinetune, 5));
  const auto ga = run_session(base_model(), h_t, eval, toy_cfg(Mode::kGenieAided, 0));
  CHECK(none.aggregate.rate_update == 0.0);
  CHECK(none.update_bytes == 0);
  CHECK(ga.aggregate.rate_update == 0.0);
  CHECK(ga.h_hat == none.h_hat);
  CHECK(ga.nmse == none.nmse);
  CHECK(ga.aggregate.rate_latent == none.aggregate.rate_latent);
}

TEST_CASE("encoder-only keeps the decoder bit-identical", "[finetune]") {
  const auto shifted = toy_data(5, 20, 0.3);
  auto cfg = toy_cfg(Mode::kEncoderOnly, 3);
  cfg.holdout = 0.0;
  const auto ft = finetune(base_model(), detail::pointers(shifted.samples), cfg);
  CHECK(ft.trained.theta == base_model().theta);
  CHECK(ft.decoder.theta == base_model().theta);
  CHECK_FALSE(ft.trained.phi == base_model().phi);
  CHECK(ft.update_section.empty());
}

TEST_CASE("full-model sessions are deterministic and decodable from theta0 alone", "[finetune]") {
  const auto shifted = toy_data(6, 30, 0.3);
  const auto all = detail::pointers(shifted.samples);
  const std::vector<const Tensor*> h_t(all.begin(), all.begin() + 20), eval(all.begin() + 20, all.end());
  auto cfg = toy_cfg(Mode::kFullModel, 4);
  cfg.lambda_m = 1e-4;
  const auto a = run_session(base_model(), h_t, eval, cfg);
  const auto b = run_session(base_model(), h_t, eval, cfg);
  CHECK(a.h_hat == b.h_hat);
  CHECK(a.finetune.update_section == b.finetune.update_section);
  REQUIRE(a.update_bytes > kUpdateHeaderSize);
  CHECK(a.nonzero_updates > 0);
  CHECK(a.aggregate.rate_update ==
        8.0 * static_cast<double>(a.update_bytes) / (static_cast<double>(eval.size()) * 64.0));

  Receiver rx(base_model(), cfg.quantizer, cfg.update_prior);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto parsed = Bitstream::parse(a.streams[i].serialize());
    CHECK(rx.decode(parsed) == a.h_hat[i]);
  }
  CHECK(rx.current.theta == a.finetune.decoder.theta);

  Receiver wrong(base_model(), cfg.quantizer, UpdatePrior::uniform(cfg.quantizer.t));
  CHECK_THROWS_AS(wrong.decode(a.streams[0]), FormatError);
}

TEST_CASE("resumed training continues bit-identically", "[finetune][checkpoint]") {
  const auto d = toy_data(7, 24);
  const auto val = toy_data(8, 8);
  auto cfg = toy_cfg(Mode::kBackbone, 4);
  const auto full = train_backbone(kTopo, d, val, cfg);

  Bytes saved_last, saved_best;
  auto hook = [&](const Model& cur, const TrainState& st, const Model& best) {
    if (st.epoch == 2) {
      saved_last = serialize_checkpoint(Checkpoint{cur, st, {}});
      saved_best = serialize_checkpoint(Checkpoint{best, std::nullopt, {}});
    }
  };
  train_backbone(kTopo, d, val, cfg, hook);
  REQUIRE_FALSE(saved_last.empty());
  const auto last = parse_checkpoint(saved_last);
  const auto best = parse_checkpoint(saved_best);
  REQUIRE(last.train);
  const auto resumed = resume_backbone(last.model, *last.train, best.model, d, val, cfg);
  CHECK(resumed.last == full.last);
  CHECK(resumed.best == full.best);
  CHECK(resumed.state == full.state);
  REQUIRE(resumed.log.size() == 2);
  CHECK(resumed.log[1].val_loss == full.log[3].val_loss);
}

TEST_CASE("schedule windows the stream and reuses session zero across intervals", "[finetune]") {
  auto c = toy_channel(9);
  const auto stream = normalize(generate_stream(c, 50, 0.002));
  auto cfg = toy_cfg(Mode::kFullModel, 1);
  const auto s20 = schedule(base_model(), stream, 20, 8, cfg);
  const auto s30 = schedule(base_model(), stream, 30, 8, cfg);
  REQUIRE(s20.size() == 3);
  CHECK(s20[2].window_begin == 40);
  CHECK(s20[2].eval_begin == 48);
  CHECK(s20[2].per_sample.size() == 2);
  REQUIRE(s30.size() == 2);
  CHECK(s30[1].per_sample.size() == 12);
  CHECK(s20[0].finetune.update_section == s30[0].finetune.update_section);
  CHECK(s20[0].h_hat == std::vector<Tensor>(s30[0].h_hat.begin(), s30[0].h_hat.begin() + 12));

  const auto agg = aggregate(s20);
  double lat = 0.0;
  std::size_t n = 0;
  for (const auto& s : s20) {
    for (const auto& p : s.per_sample) lat += p.rate_latent, ++n;
  }
  CHECK(n == 12 + 12 + 2);
  CHECK(agg.rate_latent == Catch::Approx(lat / static_cast<double>(n)).epsilon(1e-12));
  CHECK_THROWS_AS(schedule(base_model(), stream, 8, 8, cfg), ConfigError);
}

TEST_CASE("training configs validate and parse", "[finetune]") {
  auto cfg = toy_cfg(Mode::kFullModel, 1);
  cfg.lambda = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_cfg(Mode::kFullModel, 1);
  cfg.update_prior = UpdatePrior::spike_slab(0.05, 1000.0, 0.004);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_mode("fm") == Mode::kFullModel);
  CHECK(parse_mode("encoder_only") == Mode::kEncoderOnly);
  CHECK_THROWS_AS(parse_mode("bogus"), ConfigError);
  const auto j = nlohmann::json(toy_cfg(Mode::kGenieAided, 7));
  const auto back = j.get<TrainConfig>();
  CHECK(back.mode == Mode::kGenieAided);
  CHECK(back.epochs == 7);
  CHECK(back.update_weight() == 0.01);
}
