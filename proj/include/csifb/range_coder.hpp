// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "csifb/bytes.hpp"
#include "csifb/errors.hpp"

namespace csifb {

inline constexpr int kFreqBits = 31;
inline constexpr std::uint64_t kFreqTotal = std::uint64_t{1} << kFreqBits;

/// Static integer frequencies summing to 2^31, every symbol at least 1.
class FrequencyTable {
 public:
  FrequencyTable() = default;

  explicit FrequencyTable(std::span<const double> pmf) {
    if (pmf.empty()) throw ConfigError("frequency table needs at least one symbol");
    if (pmf.size() > kFreqTotal / 2) throw ConfigError("alphabet too large for frequency table");
    freq_.resize(pmf.size());
    std::int64_t total = 0;
    std::size_t largest = 0;
    for (std::size_t i = 0; i < pmf.size(); ++i) {
      if (!(pmf[i] >= 0.0) || !std::isfinite(pmf[i])) throw NumericalError("pmf entry is not a probability");
      const auto f = std::max<std::int64_t>(1, std::llround(pmf[i] * static_cast<double>(kFreqTotal)));
      freq_[i] = static_cast<std::uint64_t>(f);
      total += f;
      if (freq_[i] > freq_[largest]) largest = i;
    }
    const std::int64_t fix = static_cast<std::int64_t>(kFreqTotal) - total;
    if (static_cast<std::int64_t>(freq_[largest]) + fix < 1) {
      throw NumericalError("pmf does not sum to one closely enough to build a frequency table");
    }
    freq_[largest] = static_cast<std::uint64_t>(static_cast<std::int64_t>(freq_[largest]) + fix);
    cum_.assign(freq_.size() + 1, 0);
    for (std::size_t i = 0; i < freq_.size(); ++i) cum_[i + 1] = cum_[i] + freq_[i];
  }

  std::size_t size() const { return freq_.size(); }
  std::uint64_t freq(std::size_t s) const { return freq_[s]; }
  std::uint64_t cum(std::size_t s) const { return cum_[s]; }

  // Symbol whose cumulative interval contains v (v < total).
  std::size_t find(std::uint64_t v) const {
    auto it = std::upper_bound(cum_.begin(), cum_.end(), v);
    return static_cast<std::size_t>(it - cum_.begin()) - 1;
  }

  /// Ideal code length of `s` in bits under the integer frequencies.
  double bits(std::size_t s) const {
    return static_cast<double>(kFreqBits) - std::log2(static_cast<double>(freq_[s]));
  }

 private:
  std::vector<std::uint64_t> freq_;
  std::vector<std::uint64_t> cum_;
};

/// Range encoder with 64-bit low/range registers and byte-wise output.
/// Carries are resolved eagerly; the output is terminated by the eight bytes
/// of `low`, so a decoder consumes exactly the bytes written.
class RangeEncoder {
 public:
  void encode(const FrequencyTable& table, std::size_t symbol) {
    if (symbol >= table.size()) throw ConfigError("symbol outside coder alphabet");
    const std::uint64_t r = range_ >> kFreqBits;
    const std::uint64_t before = low_;
    low_ += r * table.cum(symbol);
    range_ = r * table.freq(symbol);
    if (low_ < before) carry();
    while (range_ < kTop) shift();
  }

  Bytes finish() {
    if (has_cache_) out_.push_back(cache_);
    out_.insert(out_.end(), pending_, 0xFF);
    for (int i = 7; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(low_ >> (8 * i)));
    has_cache_ = false;
    pending_ = 0;
    return std::move(out_);
  }

 private:
  static constexpr std::uint64_t kTop = std::uint64_t{1} << 56;

  // The interval never spans more than one unit of the emitted prefix, so
  // after a carry everything emitted so far is final.
  void carry() {
    if (!has_cache_) throw NumericalError("range coder carry into an empty prefix");
    out_.push_back(static_cast<std::uint8_t>(cache_ + 1));
    out_.insert(out_.end(), pending_, 0x00);
    has_cache_ = false;
    pending_ = 0;
  }

  void shift() {
    const auto top = static_cast<std::uint8_t>(low_ >> 56);
    if (top == 0xFF) {
      ++pending_;
    } else {
      if (has_cache_) out_.push_back(cache_);
      out_.insert(out_.end(), pending_, 0xFF);
      pending_ = 0;
      cache_ = top;
      has_cache_ = true;
    }
    low_ <<= 8;
    range_ <<= 8;
  }

  std::uint64_t low_ = 0;
  std::uint64_t range_ = ~std::uint64_t{0};
  std::uint8_t cache_ = 0;
  bool has_cache_ = false;
  std::size_t pending_ = 0;
  Bytes out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
    for (int i = 0; i < 8; ++i) diff_ = (diff_ << 8) | next();
  }

  std::size_t decode(const FrequencyTable& table) {
    const std::uint64_t r = range_ >> kFreqBits;
    const std::uint64_t v = std::min(diff_ / r, kFreqTotal - 1);
    const std::size_t s = table.find(v);
    diff_ -= r * table.cum(s);
    range_ = r * table.freq(s);
    if (diff_ >= range_) throw DecodeError("corrupt range-coded data");
    while (range_ < (std::uint64_t{1} << 56)) {
      diff_ = (diff_ << 8) | next();
      range_ <<= 8;
    }
    return s;
  }

  std::size_t consumed() const { return pos_; }

 private:
  std::uint64_t next() {
    if (pos_ >= data_.size()) throw DecodeError("truncated range-coded section");
    return data_[pos_++];
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint64_t diff_ = 0;
  std::uint64_t range_ = ~std::uint64_t{0};
};

/// -sum log2 pmf[s] over symbol indices.
inline double entropy_bits(std::span<const double> pmf, std::span<const std::size_t> symbols) {
  double bits = 0.0;
  for (std::size_t s : symbols) bits -= std::log2(pmf[s]);
  return bits;
}

}  // namespace csifb
