#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cae/cdf.hpp"

namespace cae {

/// Binary arithmetic coder with 32-bit integer state, following the
/// structure of Project Nayuki's reference arithmetic coder. Output bits are
/// packed MSB-first. Frequency totals up to 2^16 are supported.
class ArithmeticEncoder {
 public:
  void encode(std::span<const std::uint32_t> cumulative, std::size_t symbol);
  void encode(const QuantizedCdf& cdf, int value) { encode(cdf.cumulative, cdf.bin_of(value)); }
  /// Flushes the final interval and returns the stream. The encoder must not
  /// be used afterwards.
  std::vector<unsigned char> finish();

 private:
  void put_bit(unsigned bit);

  std::uint64_t low_ = 0;
  std::uint64_t high_ = 0xffffffffull;
  std::uint64_t pending_ = 0;
  std::vector<unsigned char> out_;
  unsigned char cur_ = 0;
  int nbits_ = 0;
};

class ArithmeticDecoder {
 public:
  explicit ArithmeticDecoder(std::span<const unsigned char> data);

  /// Decodes one symbol (bin index). Throws if the stream is exhausted well
  /// beyond its end, naming the symbol position.
  std::size_t decode(std::span<const std::uint32_t> cumulative);
  int decode(const QuantizedCdf& cdf) { return cdf.value_of(decode(cdf.cumulative)); }
  std::size_t symbols_decoded() const { return count_; }

 private:
  unsigned get_bit();

  std::span<const unsigned char> data_;
  std::size_t bitpos_ = 0;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = 0xffffffffull;
  std::uint64_t code_ = 0;
  std::size_t count_ = 0;
};

/// Whole-sequence helpers: one table per symbol.
std::vector<unsigned char> ac_encode(std::span<const std::size_t> symbols,
                                     std::span<const std::vector<std::uint32_t>> cumulatives);
std::vector<std::size_t> ac_decode(std::span<const unsigned char> bytes, std::size_t count,
                                   const std::function<std::span<const std::uint32_t>(std::size_t)>& table_for);

}  // namespace cae
