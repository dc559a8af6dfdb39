#include "msc/range_coder.hpp"

#include "msc/error.hpp"

namespace msc {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t size) {
  const std::uint32_t r = range_ >> kFreqBits;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * size;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(std::uint32_t value, int bits) {
  const std::uint32_t mask = (1u << bits) - 1u;
  // A raw field of `bits` bits is a uniform symbol over 2^bits slots.
  encode((value & mask) << (kFreqBits - bits), 1u << (kFreqBits - bits));
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
  }
  ++cache_size_;
  low_ = static_cast<std::uint64_t>(static_cast<std::uint32_t>(low_) << 8);
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= data_.size()) throw TruncatedStreamError("range decoder: payload exhausted");
  return data_[pos_++];
}

std::uint32_t RangeDecoder::peek() {
  slot_ = range_ >> kFreqBits;
  const std::uint32_t v = code_ / slot_;
  return v < kFreqTotal ? v : kFreqTotal - 1;
}

void RangeDecoder::consume(std::uint32_t start, std::uint32_t size) {
  code_ -= start * slot_;
  range_ = slot_ * size;
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::decode_bits(int bits) {
  const std::uint32_t step = 1u << (kFreqBits - bits);
  const std::uint32_t v = peek() / step;
  consume(v * step, step);
  return v;
}

}  // namespace msc
