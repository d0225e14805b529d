// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "csifb/update.hpp"
#include "test_util.hpp"

using namespace csifb;
using Catch::Matchers::WithinAbs;

TEST_CASE("update quantizer scalar examples", "[update]") {
  const auto q = UpdateQuantizer::make(0.005, 50);
  CHECK_THAT(q.quantize(0.0074), WithinAbs(0.005, 1e-9));
  CHECK_THAT(q.quantize(1.0), WithinAbs(0.1225, 1e-8));
  CHECK_THAT(q.quantize(-1.0), WithinAbs(-0.1225, 1e-8));
  CHECK(q.quantize(0.0024) == 0.0);
  CHECK(q.quantize(0.0026) == q.t);
  CHECK(q.quantize(-0.0024) == 0.0);
  CHECK(q.max_index() == 25);
  CHECK(q.levels() == 51);
  CHECK(q.value(24) == 24 * q.t);
  CHECK(q.value(25) == q.clip());
  const auto odd = UpdateQuantizer::make(0.01, 5);
  CHECK(odd.levels() == 5);
  CHECK(odd.value(2) == 2 * odd.t);
  CHECK(odd.quantize(0.5) == odd.clip());
  CHECK_THROWS_AS(UpdateQuantizer::make(0.0, 50), ConfigError);
  CHECK_THROWS_AS(UpdateQuantizer::make(0.005, 1), ConfigError);
  CHECK_THROWS_AS(q.index(std::nan("")), NumericalError);
}

TEST_CASE("quantization is idempotent and within half a step inside the clip", "[update]") {
  Rng rng(4);
  for (int n : {2, 3, 8, 50, 64, 255}) {
    const auto q = UpdateQuantizer::make(0.003, n);
    for (int i = 0; i < 2000; ++i) {
      const double d = 0.3 * rng.normal();
      const double v = q.quantize(d);
      CHECK(q.quantize(v) == v);
      CHECK(std::abs(v) <= q.clip() + 1e-15);
      if (std::abs(d) < q.clip() - q.t) CHECK(std::abs(v - d) <= q.t / 2 + 1e-15);
    }
  }
}

TEST_CASE("spike-and-slab pmf sums to one", "[update][prior]") {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = std::exp(rng.uniform(std::log(1e-4), std::log(0.1)));
    const double sigma = t * rng.uniform(5.0 / 6.0, 200.0);
    const double alpha = rng.below(4) == 0 ? 0.0 : std::exp(rng.uniform(-3.0, 12.0));
    const int n = 2 + static_cast<int>(rng.below(300));
    const auto q = UpdateQuantizer::make(t, n);
    const auto p = UpdatePrior::spike_slab(sigma, alpha, t);
    const auto pmf = p.bin_pmf(q);
    double s = 0.0;
    for (double v : pmf) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK_THAT(s, WithinAbs(1.0, 1e-9));
  }
}

TEST_CASE("near-pure spike puts 99.73 percent in the zero bin", "[update][prior]") {
  const auto q = UpdateQuantizer::make(0.005, 50);
  const auto p = UpdatePrior::spike_slab(0.05, 1e8, 0.005);
  const double centre = p.bin_pmf(q)[static_cast<std::size_t>(q.max_index())];
  CHECK_THAT(centre, WithinAbs(0.9973, 0.0005));
}

TEST_CASE("interior bin masses match numerical quadrature", "[update][prior]") {
  const auto q = UpdateQuantizer::make(0.005, 50);
  const auto p = UpdatePrior::spike_slab(0.02, 30.0, 0.005);
  const auto pmf = p.bin_pmf(q);
  for (int j = -q.max_index() + 1; j < q.max_index(); ++j) {
    const double a = q.lower(j), b = q.upper(j);
    const int steps = 2000;  // composite Simpson
    const double h = (b - a) / steps;
    double acc = p.density(a) + p.density(b);
    for (int i = 1; i < steps; ++i) acc += (i % 2 ? 4.0 : 2.0) * p.density(a + i * h);
    const double integral = acc * h / 3.0;
    CHECK_THAT(pmf[static_cast<std::size_t>(j + q.max_index())], WithinAbs(integral, 1e-12));
  }
  CHECK_THROWS_AS(UpdatePrior::spike_slab(0.001, 1.0, 0.005), ConfigError);
  CHECK_THROWS_AS(UpdatePrior::spike_slab(0.05, -1.0, 0.005), ConfigError);
  CHECK_THROWS_AS(p.bin_pmf(UpdateQuantizer::make(0.004, 50)), ConfigError);
}

TEST_CASE("update surrogate and its gradient", "[update][prior]") {
  const auto q = UpdateQuantizer::make(0.005, 50);
  const auto p = UpdatePrior::spike_slab(0.05, 1000.0, 0.005);
  Rng rng(3);
  std::vector<double> d(50);
  for (auto& v : d) v = 0.01 * rng.normal();
  const auto s = update_surrogate(d, p, q);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto f = [&] { return update_surrogate(d, p, q).bits; };
    CHECK(test::rel_err(test::central_diff(f, d[i], 1e-7), s.grad[i]) < 1e-5);
  }
  const std::vector<double> zero(10, 0.0);
  const auto z = quantize_update(zero, q);
  CHECK(update_surrogate(zero, p, q).bits == Catch::Approx(update_rate_bits(z, p, q)).epsilon(1e-12));
  const auto u = UpdatePrior::uniform(0.005);
  CHECK(update_surrogate(d, u, q).bits == Catch::Approx(50 * std::log2(51.0)));
  CHECK(update_rate_bits(quantize_update(d, q), u, q) == Catch::Approx(50 * std::log2(51.0)));
}

TEST_CASE("update sections round trip and check their header", "[update][coding]") {
  const auto q = UpdateQuantizer::make(0.005, 50);
  const auto p = UpdatePrior::spike_slab(0.05, 1000.0, 0.005);
  Rng rng(6);
  std::vector<double> d(5000);
  for (auto& v : d) v = rng.below(10) == 0 ? 0.05 * rng.normal() : 0.0;
  const auto u = quantize_update(d, q);
  const Bytes sec = encode_update(u, p, q);
  const auto h = read_update_header(sec);
  CHECK(h.len == 5000);
  CHECK(h.n == 50);
  CHECK(static_cast<float>(h.t) == static_cast<float>(q.t));
  CHECK(decode_update(sec, p, q, 5000) == u);
  const double bits = 8.0 * static_cast<double>(sec.size() - kUpdateHeaderSize);
  const double ideal = update_rate_bits(u, p, q);
  CHECK(bits >= ideal);
  CHECK(bits <= 1.02 * ideal + 256);

  CHECK_THROWS_AS(decode_update(sec, p, UpdateQuantizer::make(0.005, 64), 5000), FormatError);
  CHECK_THROWS_AS(decode_update(sec, UpdatePrior::spike_slab(0.06, 1000, 0.005), q, 5000), FormatError);
  CHECK_THROWS_AS(decode_update(sec, UpdatePrior::uniform(0.005), q, 5000), FormatError);
  CHECK_THROWS_AS(decode_update(sec, p, q, 4999), FormatError);
  Bytes cut(sec.begin(), sec.end() - 3);
  CHECK_THROWS_AS(decode_update(cut, p, q, 5000), DecodeError);
  CHECK_THROWS_AS(decode_update(Bytes(sec.begin(), sec.begin() + 10), p, q, 5000), FormatError);

  const auto uni = UpdatePrior::uniform(0.005);
  const Bytes us = encode_update(u, uni, q);
  CHECK(decode_update(us, uni, q, 5000) == u);
  CHECK(read_update_header(us).sigma == 0.0);
}

TEST_CASE("quantizer and prior configs survive JSON", "[update]") {
  const auto q = UpdateQuantizer::make(0.004, 64);
  const auto p = UpdatePrior::spike_slab(0.03, 500.0, 0.004);
  CHECK(nlohmann::json(q).get<UpdateQuantizer>() == q);
  CHECK(nlohmann::json(p).get<UpdatePrior>() == p);
  CHECK(nlohmann::json(UpdatePrior::uniform(0.004)).get<UpdatePrior>().is_uniform());
}
