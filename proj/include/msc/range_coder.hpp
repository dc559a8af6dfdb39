#pragma once

// Byte-oriented range coder: 64-bit low register with carry propagation,
// 32-bit range, byte-wise renormalization below 2^24 and 16-bit frequency
// totals.

#include <cstdint>
#include <span>
#include <vector>

namespace msc {

inline constexpr int kFreqBits = 16;
inline constexpr std::uint32_t kFreqTotal = 1u << kFreqBits;

class RangeEncoder {
 public:
  /// Codes the interval [start, start + size) out of kFreqTotal.
  void encode(std::uint32_t start, std::uint32_t size);
  /// Codes `bits` (<= 16) raw bits.
  void encode_bits(std::uint32_t value, int bits);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data);

  /// Frequency slot of the next symbol, in [0, kFreqTotal).
  std::uint32_t peek();
  /// Consumes the interval that contains the slot returned by peek().
  void consume(std::uint32_t start, std::uint32_t size);
  std::uint32_t decode_bits(int bits);

  /// Bytes read so far.
  std::size_t position() const { return pos_; }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t slot_ = 0;
};

}  // namespace msc
