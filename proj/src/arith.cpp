#include "cae/arith.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace cae {

namespace {
constexpr std::uint64_t kFull = 1ull << 32;
constexpr std::uint64_t kHalf = kFull >> 1;
constexpr std::uint64_t kQuarter = kHalf >> 1;
constexpr std::uint64_t kMask = kFull - 1;
// Legitimate streams are read at most ~32 bits past their end (the decoder
// keeps a 32-bit window); more than this means truncation.
constexpr std::size_t kMaxOverreadBits = 64;

void check_table(std::span<const std::uint32_t> cum, std::size_t symbol) {
  if (cum.size() < 2 || symbol + 1 >= cum.size()) throw std::out_of_range("arithmetic coder: symbol outside table");
  if (cum.back() > kCdfTotal) throw std::invalid_argument("arithmetic coder: total exceeds 2^16");
  if (cum[symbol + 1] <= cum[symbol]) throw std::invalid_argument("arithmetic coder: zero-frequency symbol");
}
}  // namespace

void ArithmeticEncoder::put_bit(unsigned bit) {
  cur_ = static_cast<unsigned char>((cur_ << 1) | bit);
  if (++nbits_ == 8) {
    out_.push_back(cur_);
    cur_ = 0;
    nbits_ = 0;
  }
}

void ArithmeticEncoder::encode(std::span<const std::uint32_t> cum, std::size_t symbol) {
  check_table(cum, symbol);
  const std::uint64_t total = cum.back();
  const std::uint64_t range = high_ - low_ + 1;
  const std::uint64_t new_low = low_ + cum[symbol] * range / total;
  const std::uint64_t new_high = low_ + cum[symbol + 1] * range / total - 1;
  low_ = new_low;
  high_ = new_high;
  while (((low_ ^ high_) & kHalf) == 0) {
    const unsigned bit = static_cast<unsigned>(low_ >> 31);
    put_bit(bit);
    for (; pending_ > 0; --pending_) put_bit(bit ^ 1u);
    low_ = (low_ << 1) & kMask;
    high_ = ((high_ << 1) & kMask) | 1;
  }
  while ((low_ & ~high_ & kQuarter) != 0) {
    ++pending_;
    low_ = (low_ << 1) ^ kHalf;
    high_ = ((high_ ^ kHalf) << 1) | kHalf | 1;
  }
}

std::vector<unsigned char> ArithmeticEncoder::finish() {
  put_bit(1);
  while (nbits_ != 0) put_bit(0);
  return std::move(out_);
}

ArithmeticDecoder::ArithmeticDecoder(std::span<const unsigned char> data) : data_(data) {
  for (int i = 0; i < 32; ++i) code_ = (code_ << 1) | get_bit();
}

unsigned ArithmeticDecoder::get_bit() {
  const std::size_t byte = bitpos_ >> 3;
  unsigned bit = 0;
  if (byte < data_.size()) {
    bit = (data_[byte] >> (7 - (bitpos_ & 7))) & 1u;
  } else if (bitpos_ - data_.size() * 8 > kMaxOverreadBits) {
    throw std::runtime_error("arithmetic decoder: stream exhausted at symbol " + std::to_string(count_) + " (byte " +
                             std::to_string(data_.size()) + ")");
  }
  ++bitpos_;
  return bit;
}

std::size_t ArithmeticDecoder::decode(std::span<const std::uint32_t> cum) {
  if (cum.size() < 2 || cum.back() > kCdfTotal) throw std::invalid_argument("arithmetic decoder: bad table");
  const std::uint64_t total = cum.back();
  const std::uint64_t range = high_ - low_ + 1;
  const std::uint64_t offset = code_ - low_;
  const std::uint64_t value = ((offset + 1) * total - 1) / range;
  // Largest bin whose lower bound is <= value.
  const auto it = std::upper_bound(cum.begin(), cum.end() - 1, static_cast<std::uint32_t>(value));
  const std::size_t symbol = static_cast<std::size_t>(it - cum.begin()) - 1;
  check_table(cum, symbol);
  const std::uint64_t new_low = low_ + cum[symbol] * range / total;
  const std::uint64_t new_high = low_ + cum[symbol + 1] * range / total - 1;
  low_ = new_low;
  high_ = new_high;
  while (((low_ ^ high_) & kHalf) == 0) {
    code_ = ((code_ << 1) & kMask) | get_bit();
    low_ = (low_ << 1) & kMask;
    high_ = ((high_ << 1) & kMask) | 1;
  }
  while ((low_ & ~high_ & kQuarter) != 0) {
    code_ = (code_ & kHalf) | ((code_ << 1) & (kMask >> 1)) | get_bit();
    low_ = (low_ << 1) ^ kHalf;
    high_ = ((high_ ^ kHalf) << 1) | kHalf | 1;
  }
  ++count_;
  return symbol;
}

std::vector<unsigned char> ac_encode(std::span<const std::size_t> symbols,
                                     std::span<const std::vector<std::uint32_t>> cumulatives) {
  if (symbols.size() != cumulatives.size()) throw std::invalid_argument("ac_encode: one table per symbol required");
  ArithmeticEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(cumulatives[i], symbols[i]);
  return enc.finish();
}

std::vector<std::size_t> ac_decode(std::span<const unsigned char> bytes, std::size_t count,
                                   const std::function<std::span<const std::uint32_t>(std::size_t)>& table_for) {
  ArithmeticDecoder dec(bytes);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(dec.decode(table_for(i)));
  return out;
}

}  // namespace cae
