// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <complex>
#include <filesystem>
#include <numbers>
#include <set>

#include "csifb/channel.hpp"
#include "csifb/csibin.hpp"

using namespace csifb;

namespace {

ChannelConfig small(std::uint64_t seed = 3) {
  ChannelConfig c;
  c.n_tx = 32;
  c.n_sub = 16;
  c.seed = seed;
  return c;
}

// Bartlett angular spectrum of a ULA dataset; returns the peak azimuth.
double periodogram_peak(const CsiDataset& ds) {
  const std::size_t nt = ds.n_tx(), nc = ds.n_sub(), plane = nt * nc;
  const double spacing = std::numbers::pi * (1.0 + ds.config.carrier_offset);
  double best = -1.0, best_angle = 0.0;
  for (int k = -600; k <= 600; ++k) {
    const double theta = k * 0.001;
    double power = 0.0;
    for (const auto& s : ds.samples) {
      for (std::size_t m = 0; m < nc; ++m) {
        std::complex<double> acc = 0.0;
        for (std::size_t n = 0; n < nt; ++n) {
          const std::complex<double> h(s[n * nc + m], s[plane + n * nc + m]);
          acc += h * std::polar(1.0, spacing * static_cast<double>(n) * std::sin(theta));
        }
        power += std::norm(acc);
      }
    }
    if (power > best) best = power, best_angle = theta;
  }
  return best_angle;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed", "[channel]") {
  const auto a = generate(small(), 5), b = generate(small(), 5), c = generate(small(9), 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.samples[i].vec() == b.samples[i].vec());
    CHECK(a.samples[i].vec() != c.samples[i].vec());
  }
  // a longer draw extends, never reshuffles
  const auto d = generate(small(), 8);
  CHECK(d.samples[4].vec() == a.samples[4].vec());
}

TEST_CASE("narrow angular spread concentrates spatial energy", "[channel]") {
  ChannelConfig c = small();
  c.angle_spread = 0.01;
  const double narrow = dominant_eigen_fraction(spatial_correlation(generate(c, 200)));
  c.angle_spread = 0.5;
  const double wide = dominant_eigen_fraction(spatial_correlation(generate(c, 200)));
  CHECK(narrow > 0.8);
  CHECK(wide < narrow);
}

TEST_CASE("angular periodogram peaks at the configured departure angle", "[channel]") {
  ChannelConfig c = small();
  c.n_sub = 4;
  const auto base = generate(c, 40);
  const auto moved = generate(shift(c, 0.3, 1.0, 0), 40);
  CHECK(std::abs(periodogram_peak(base) - 0.0) < 0.03);
  CHECK(std::abs(periodogram_peak(moved) - 0.3) < 0.03);
}

TEST_CASE("shifted environment differs in correlation statistics", "[channel]") {
  const auto pool = generate(small(), 200);
  const auto a = pool.subset(0, 100), b = pool.subset(100, 200);
  ChannelConfig sc = shift(small(), 0.2, 1.0, 0);
  sc.seed = 77;
  const auto s = generate(sc, 100);
  const double within = correlation_distance(spatial_correlation(a), spatial_correlation(b));
  const double across = correlation_distance(spatial_correlation(a), spatial_correlation(s));
  CHECK(across > 3.0 * within);
}

TEST_CASE("shift validates its arguments", "[channel]") {
  CHECK_THROWS_AS(shift(small(), 0.1, -1.0, 0), ConfigError);
  CHECK_THROWS_AS(shift(small(), 0.1, 1.0, -10), ConfigError);
  ChannelConfig bad = small();
  bad.n_tx = 48;
  CHECK_THROWS_AS(generate(bad, 1), ConfigError);
  const auto s = shift(small(), 0.0, 0.0, 2);
  CHECK(s.n_paths == 12);
  CHECK(s.angle_spread == 0.0);
}

TEST_CASE("256 antennas form a 64x4 planar array", "[channel]") {
  ChannelConfig c;
  c.n_tx = 256;
  c.n_sub = 4;
  CHECK(c.array_rows() == 64);
  CHECK(c.array_cols() == 4);
  CHECK(generate(c, 1).samples[0].shape() == Shape{2, 256, 4});
}

TEST_CASE("split sizes are exact, disjoint and exhaustive", "[channel]") {
  auto ds = generate(small(), 10);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.samples[i][0] = static_cast<double>(i);  // tag
  const auto s = split(ds, {0.4, 0.4, 0.2}, 5);
  CHECK(s.train.size() == 4);
  CHECK(s.val.size() == 4);
  CHECK(s.test.size() == 2);
  std::set<double> seen;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& x : part->samples) seen.insert(x[0]);
  }
  CHECK(seen.size() == 10);
  CHECK_THROWS_AS(split(ds, {0.5, 0.5, 0.5}, 1), ConfigError);
  const auto again = split(ds, {0.4, 0.4, 0.2}, 5);
  CHECK(again.test.samples[0].vec() == s.test.samples[0].vec());
}

TEST_CASE("normalization is scale invariant", "[channel]") {
  const auto ds = generate(small(), 20);
  auto scaled = ds;
  for (auto& x : scaled.samples) x *= 37.5;
  const auto a = normalize(ds), b = normalize(scaled);
  CHECK(mean_power(a) == Catch::Approx(static_cast<double>(ds.elements())).epsilon(1e-12));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a.samples[i].size(); ++k) {
      CHECK_THAT(a.samples[i][k], Catch::Matchers::WithinAbs(b.samples[i][k], 1e-12));
    }
  }
  CHECK(b.scale * 37.5 == Catch::Approx(a.scale));
}

TEST_CASE("CSIBIN round trip and fault injection", "[channel][csibin]") {
  auto ds = generate(small(), 3);
  for (auto& s : ds.samples) {
    for (auto& v : s.data()) v = static_cast<float>(v);
  }
  ds.normalized = true;
  const Bytes img = encode_csibin(ds);
  CHECK(img.size() == kCsibHeaderSize + 3 * 2 * 32 * 16 * 4);
  const auto back = decode_csibin(img);
  CHECK(back.normalized);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back.samples[i].vec() == ds.samples[i].vec());

  auto expect_format = [](Bytes b, std::size_t at) {
    try {
      decode_csibin(b);
      FAIL("accepted a corrupt image");
    } catch (const FormatError& e) {
      CHECK(e.offset() == at);
    }
  };
  Bytes bad = img;
  bad[0] = 'X';
  expect_format(bad, 0);
  bad = img;
  bad[4] = 2;
  expect_format(bad, 4);
  bad = img;
  bad[6] = 4;
  expect_format(bad, 6);
  bad = img;
  bad.resize(img.size() - 3);
  CHECK_THROWS_AS(decode_csibin(bad), FormatError);
  bad = img;
  bad.push_back(0);
  expect_format(bad, img.size());
  bad = img;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + kCsibHeaderSize + 8, &nan, 4);
  expect_format(bad, kCsibHeaderSize + 8);
  CHECK_THROWS_AS(decode_csibin(Bytes(img.begin(), img.begin() + 10)), FormatError);
}

TEST_CASE("ingest merges the manifest and checks its hash", "[channel][csibin]") {
  const auto dir = std::filesystem::temp_directory_path() / "csifb_test_ingest";
  std::filesystem::create_directories(dir);
  ChannelConfig c = small(42);
  c.mean_angle = 0.25;
  auto ds = normalize(generate(c, 4));
  ds.tag = "train";
  write_csibin(dir / "a.csib", ds);
  const auto back = ingest(dir / "a.csib");
  CHECK(back.config == c);
  CHECK(back.tag == "train");
  CHECK(back.scale == Catch::Approx(ds.scale));
  Bytes img = read_file(dir / "a.csib");
  img[kCsibHeaderSize] ^= 1;
  write_file(dir / "a.csib", img);
  CHECK_THROWS_AS(ingest(dir / "a.csib"), FormatError);
  std::filesystem::remove_all(dir);
}
