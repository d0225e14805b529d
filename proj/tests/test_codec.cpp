// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "csifb/checkpoint.hpp"
#include "csifb/latent.hpp"
#include "csifb/losses.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace csifb;

namespace {

Topology toy() { return Topology{8, 8, 3, 3, 2}; }

std::vector<Tensor> toy_batch(const Topology& t, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(test::random_tensor(t.input_shape(), rng));
  return out;
}

}  // namespace

TEST_CASE("topology validation and shapes", "[codec]") {
  CHECK_THROWS_AS((Topology{6, 8, 4, 3, 2}).validate(), ConfigError);
  CHECK_THROWS_AS((Topology{8, 8, 4, 4, 2}).validate(), ConfigError);
  const Model m = init_model(toy(), 1);
  const auto x = toy_batch(toy(), 1, 2)[0];
  const Tensor z = encode_features(m, x);
  CHECK(z.shape() == Shape{2, 2, 2});
  CHECK(decode_features(m, z).shape() == x.shape());
  CHECK_THROWS_AS(encode_features(m, Tensor(Shape{2, 4, 8})), DimensionError);
  CHECK_THROWS_AS(decode_features(m, Tensor(Shape{2, 4, 4})), DimensionError);
}

TEST_CASE("initialization is seeded with zero biases", "[codec]") {
  const Model a = init_model(toy(), 5), b = init_model(toy(), 5), c = init_model(toy(), 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.phi.get("enc.conv1.bias").squared_norm() == 0.0);
  CHECK(a.theta.names[kPriorOffset] == "prior.matrix0");
  CHECK(a.theta.count() == kPriorOffset + prior::kTensorCount);
  Topology wide{16, 16, 64, 5, 2};
  const Model w = init_model(wide, 1);
  const Tensor& k = w.phi.get("enc.conv1.weight");
  const double var = k.squared_norm() / static_cast<double>(k.size());
  CHECK(var == Catch::Approx(2.0 / (64 * 25)).epsilon(0.05));
}

TEST_CASE("factorized prior cdf is monotone and peaks at zero", "[codec][prior]") {
  Model m = init_model(toy(), 3);
  Rng rng(9);
  const auto check = [](const prior::View& v) {
    for (std::size_t c = 0; c < v.channels(); ++c) {
      double prev = 0.0;
      for (int k = -400; k <= 400; ++k) {
        const double f = prior::cdf(v, c, k * 0.5);
        CHECK(f >= prev);
        prev = f;
      }
      const auto p = latent_pmf(v, c);
      double s = 0.0;
      for (double q : p) {
        CHECK(q >= kPmfFloor * (1 - 1e-12));
        s += q;
      }
      CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
    }
  };
  check(prior_view(m));
  const auto p0 = latent_pmf(prior_view(m), 0);
  CHECK(std::max_element(p0.begin(), p0.end()) - p0.begin() == kLatentAlphabet);
  // perturbed parameters keep the cdf monotone
  for (std::size_t k = kPriorOffset; k < m.theta.count(); ++k) {
    for (auto& v : m.theta.tensors[k].data()) v += 0.5 * rng.normal();
  }
  check(prior_view(m));
}

TEST_CASE("floor_and_normalize keeps every entry at the floor", "[codec][prior]") {
  std::vector<double> p(10, 0.0);
  p[0] = 1.0;
  const auto q = floor_and_normalize(p, 0.01);
  double s = 0.0;
  for (double v : q) {
    CHECK(v >= 0.01);
    s += v;
  }
  CHECK(s == Catch::Approx(1.0));
  CHECK(q[0] == Catch::Approx(0.91));
  CHECK_THROWS_AS(floor_and_normalize(p, 0.2), ConfigError);
}

TEST_CASE("latent rate op gradients match finite differences", "[codec][prior][gradcheck]") {
  Model m = init_model(toy(), 4);
  Rng rng(12);
  for (std::size_t k = kPriorOffset; k < m.theta.count(); ++k) {
    for (auto& v : m.theta.tensors[k].data()) v += 0.3 * rng.normal();
  }
  Tensor y = test::random_tensor({2, 3, 3}, rng, 3.0);
  auto f = [&] { return relaxed_rate_bits(prior_view(m), y); };
  GradTape tape;
  const Var yv = tape.parameter(0, y);
  std::array<Var, prior::kTensorCount> pv;
  for (std::size_t k = 0; k < prior::kTensorCount; ++k) pv[k] = tape.parameter(1 + k, m.theta.tensors[kPriorOffset + k]);
  const Var r = ops::latent_rate(tape, yv, pv);
  CHECK(tape.scalar(r) == f());
  const Gradients g = tape.backward(r);
  double worst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, test::rel_err(test::central_diff(f, y[i], 1e-6), g.at(0)[i]));
  for (std::size_t k = 0; k < prior::kTensorCount; ++k) {
    auto& t = m.theta.tensors[kPriorOffset + k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      worst = std::max(worst, test::rel_err(test::central_diff(f, t[i], 1e-6), g.at(1 + k)[i]));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("RD and RDM objective gradients match finite differences", "[codec][gradcheck]") {
  const Topology t{4, 4, 2, 3, 1};
  Model m = init_model(t, 7);
  Rng rng(3);
  // zero biases put ReLU inputs exactly on the kink for all-zero feature maps
  for (auto* ps : {&m.phi, &m.theta}) {
    for (auto& ten : ps->tensors) {
      for (auto& v : ten.data()) v += 0.05 * rng.normal();
    }
  }
  const auto data = toy_batch(t, 2, 8);
  std::vector<const Tensor*> batch{&data[0], &data[1]};
  std::vector<Tensor> noise{uniform_noise(t.latent_shape(), rng), uniform_noise(t.latent_shape(), rng)};
  Objective rd;
  rd.lambda = 2.0;
  const auto a = test::check_gradients(m, batch, noise, rd, 1e-5);
  INFO(a.worst_at);
  CHECK(a.checked == m.phi.total_size() + m.theta.total_size());
  CHECK(a.worst < 1e-4);

  Model moved = m;
  for (auto& ten : moved.theta.tensors) {
    for (auto& v : ten.data()) v += 0.01 * rng.normal();
  }
  Objective rdm = rd;
  rdm.update = UpdateTerm{&m.theta, UpdateQuantizer::make(0.005, 50), UpdatePrior::spike_slab(0.05, 1000, 0.005), 0.3,
                          false, true};
  // the spike component is only t/6 wide, so a coarse step overshoots its curvature
  const auto b = test::check_gradients(moved, batch, noise, rdm, 1e-6);
  INFO(b.worst_at);
  CHECK(b.worst < 1e-4);
}

TEST_CASE("straight-through gradients equal the identity swap at theta bar", "[codec][ste]") {
  const Topology t{8, 8, 3, 3, 2};
  const Model base = init_model(t, 2);
  Model m = base;
  Rng rng(17);
  for (auto& ten : m.theta.tensors) {
    for (auto& v : ten.data()) v += 0.02 * rng.normal();
  }
  const auto data = toy_batch(t, 3, 4);
  std::vector<const Tensor*> batch{&data[0], &data[1], &data[2]};
  std::vector<Tensor> noise;
  for (int i = 0; i < 3; ++i) noise.push_back(uniform_noise(t.latent_shape(), rng));
  const UpdateQuantizer q = UpdateQuantizer::make(0.005, 50);
  const UpdatePrior p = UpdatePrior::spike_slab(0.05, 1000, 0.005);
  Objective ste;
  ste.lambda = 1.5;
  ste.update = UpdateTerm{&base.theta, q, p, 0.2, true, true};
  const LossGrad g = rd_loss_grad(m, batch, noise, ste);

  Model swapped = m;
  swapped.theta = quantized_theta(m.theta, base.theta, q);
  Objective id = ste;
  id.update->quantize = false;
  id.update->rate_term = false;
  const LossGrad h = rd_loss_grad(swapped, batch, noise, id);
  const auto sur = update_surrogate(flat_delta(m.theta, base.theta), p, q);

  CHECK(g.terms.rate_bits == h.terms.rate_bits);
  CHECK(g.terms.distortion == h.terms.distortion);
  for (std::size_t i = 0; i < g.phi.size(); ++i) CHECK(g.phi[i].vec() == h.phi[i].vec());
  std::size_t off = 0;
  for (std::size_t i = 0; i < g.theta.size(); ++i) {
    for (std::size_t k = 0; k < g.theta[i].size(); ++k) {
      CHECK(g.theta[i][k] == h.theta[i][k] + 0.2 * sur.grad[off++]);
    }
  }
  CHECK(g.terms.value == Catch::Approx(h.terms.value + 0.2 * sur.bits).epsilon(1e-14));
}

TEST_CASE("latent quantizer rounds half away from zero and clamps", "[codec][latent]") {
  const Tensor z(Shape{1, 1, 6}, std::vector<double>{0.5, -0.5, 1.49, -2.5, 300.0, -1e9});
  const Tensor q = quantize_unit(z);
  CHECK(std::vector<double>(q.vec().begin(), q.vec().end()) == std::vector<double>{1, -1, 1, -3, 255, -255});
  CHECK(is_quantized(q));
  CHECK_FALSE(is_quantized(z));
  Tensor bad = z;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(quantize_unit(bad), NumericalError);
}

TEST_CASE("checkpoints round trip bit-exactly and reject corruption", "[codec][checkpoint]") {
  Checkpoint ck{init_model(toy(), 3), TrainState{}, {{"lambda", 3.0}}};
  ck.train->adam_phi = AdamState::for_params(ck.model.phi.tensors);
  ck.train->adam_phi.m[0][0] = 0.25;
  ck.train->adam_phi.step = 7;
  ck.train->epoch = 12;
  ck.train->best_val = 1.5;
  const Bytes img = serialize_checkpoint(ck);
  const Checkpoint back = parse_checkpoint(img);
  CHECK(back.model == ck.model);
  REQUIRE(back.train);
  CHECK(*back.train == *ck.train);
  CHECK(back.meta["lambda"] == 3.0);
  CHECK(serialize_checkpoint(back) == img);

  Bytes bad = img;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  bad = img;
  bad.pop_back();
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  bad = img;
  bad.push_back(1);
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  bad = img;
  bad[4] = 9;
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  bad = img;
  bad[10] = 'x';
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
}
