// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "csifb/adam.hpp"
#include "csifb/kernels.hpp"
#include "csifb/tape.hpp"
#include "test_util.hpp"

using namespace csifb;
using test::random_tensor;

namespace {

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0), k = w.dim(2);
  const long pad = static_cast<long>(k / 2);
  Tensor y(Shape{co, h, wd});
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < wd; ++c) {
        double acc = b[o];
        for (std::size_t i = 0; i < ci; ++i) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long yy = static_cast<long>(r + ky) - pad, xx = static_cast<long>(c + kx) - pad;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
              acc += w[((o * ci + i) * k + ky) * k + kx] * x.at(i, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
          }
        }
        y.at(o, r, c) = acc;
      }
    }
  }
  return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop", "[tensor]") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(4), h = 1 + rng.below(9), w = 1 + rng.below(9);
    const std::size_t k = 1 + 2 * rng.below(3);
    const Tensor x = random_tensor({ci, h, w}, rng), wt = random_tensor({co, ci, k, k}, rng),
                 b = random_tensor({co}, rng);
    CHECK(max_abs_diff(kernels::conv2d(x, wt, &b), naive_conv(x, wt, b)) < 1e-12);
  }
}

TEST_CASE("conv2d rejects mismatched shapes", "[tensor]") {
  const Tensor x(Shape{2, 4, 4}), w(Shape{3, 1, 3, 3}), even(Shape{3, 2, 2, 2}), b(Shape{2});
  CHECK_THROWS_AS(kernels::conv2d(x, w), DimensionError);
  CHECK_THROWS_AS(kernels::conv2d(x, even), DimensionError);
  CHECK_THROWS_AS(kernels::conv2d(x, Tensor(Shape{3, 2, 3, 3}), &b), DimensionError);
}

TEST_CASE("pool and upsample match direct definitions", "[tensor]") {
  Rng rng(3);
  const Tensor x = random_tensor({3, 6, 8}, rng);
  const auto p = kernels::maxpool2d(x, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t q = 0; q < 4; ++q) {
        const double m = std::max({x.at(c, 2 * r, 2 * q), x.at(c, 2 * r + 1, 2 * q), x.at(c, 2 * r, 2 * q + 1),
                                   x.at(c, 2 * r + 1, 2 * q + 1)});
        CHECK(p.output.at(c, r, q) == m);
      }
    }
  }
  const Tensor u = kernels::upsample_nearest2d(p.output, 2);
  REQUIRE(u.shape() == Shape{3, 6, 8});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t q = 0; q < 8; ++q) CHECK(u.at(c, r, q) == p.output.at(c, r / 2, q / 2));
    }
  }
  CHECK_THROWS_AS(kernels::maxpool2d(Tensor(Shape{1, 3, 4}), 2), DimensionError);
}

// Random small graphs mixing every primitive; gradients of all registered
// leaves against central differences.
TEST_CASE("tape gradients match finite differences on random graphs", "[tensor][gradcheck]") {
  Rng rng(2024);
  int configs = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t ci = 1 + rng.below(2), co = 1 + rng.below(3), h = 2 * (1 + rng.below(3)),
                      w = 2 * (1 + rng.below(3)), k = 1 + 2 * rng.below(2);
    const int variant = static_cast<int>(rng.below(4));
    std::vector<Tensor> leaves{random_tensor({ci, h, w}, rng), random_tensor({co, ci, k, k}, rng, 0.5),
                               random_tensor({co}, rng, 0.1), random_tensor({co, h, w}, rng)};
    const Tensor target = random_tensor({co, h, w}, rng);

    auto build = [&](GradTape& t, bool params) {
      std::vector<Var> v;
      for (std::size_t i = 0; i < leaves.size(); ++i) v.push_back(params ? t.parameter(i, leaves[i]) : t.constant(leaves[i]));
      Var y = ops::conv2d(t, v[0], v[1], v[2]);
      switch (variant) {
        case 0: y = ops::relu(t, y); break;
        case 1: y = ops::upsample2(t, ops::maxpool2(t, y)); break;
        case 2: y = ops::mul(t, y, v[3]); break;
        default: y = ops::add(t, ops::scale(t, y, 0.7), v[3]); break;
      }
      const Var a = ops::squared_error(t, y, target);
      const Var b = ops::sum(t, ops::mul(t, y, v[3]));
      return ops::add_all(t, {a, ops::scale(t, b, 0.3)});
    };
    GradTape tape;
    const Gradients g = tape.backward(build(tape, true));
    auto f = [&] {
      GradTape t;
      return t.scalar(build(t, false));
    };
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      for (std::size_t e = 0; e < leaves[li].size(); ++e) {
        const double fd = test::central_diff(f, leaves[li][e], 1e-6);
        const double err = std::abs(fd - g.at(li)[e]) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
      }
    }
    ++configs;
  }
  CHECK(configs >= 100);
  CHECK(worst < 1e-6);
}

TEST_CASE("tape misuse is reported", "[tensor]") {
  GradTape t;
  t.parameter(0, Tensor(Shape{1}));
  CHECK_THROWS_AS(t.parameter(0, Tensor(Shape{1})), TapeError);
  const Var v = t.constant(Tensor(Shape{2}));
  CHECK_THROWS_AS(t.backward(v), TapeError);
  CHECK_THROWS_AS(t.value(Var{99}), TapeError);
  const Gradients g = t.backward(t.parameter(3, Tensor::scalar(2.0)));
  CHECK(g.at(3)[0] == 1.0);
  CHECK_THROWS_AS(g.at(2), TapeError);
}

TEST_CASE("adam step matches hand computation", "[tensor][adam]") {
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  const std::vector<Tensor> g{Tensor::scalar(0.5)};
  AdamState st;
  const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  adam_step(p, g, st, cfg);
  // m_hat = 0.5, v_hat = 0.25 -> step = lr * 0.5 / (0.5 + eps)
  CHECK(p[0][0] == Catch::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  adam_step(p, g, st, cfg);
  CHECK(p[0][0] == Catch::Approx(1.0 - 2 * 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(st.step == 2);
  CHECK(st.m[0][0] == Catch::Approx(0.095));
  CHECK(st.v[0][0] == Catch::Approx(0.00049975));
  std::vector<Tensor> bad{Tensor::scalar(0.0), Tensor::scalar(0.0)};
  CHECK_THROWS_AS(adam_step(bad, g, st, cfg), DimensionError);
}

TEST_CASE("rng streams are reproducible and independent", "[tensor][rng]") {
  Rng a(derive_seed(7, 1)), b(derive_seed(7, 1)), c(derive_seed(7, 2));
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    CHECK(x != c.next());
  }
  Rng r(5);
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / 1e5) < 0.02);
  CHECK(std::abs(s2 / 1e5 - 1.0) < 0.02);
}
