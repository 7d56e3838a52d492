#pragma once

// Multi-symbol range coder over static 16-bit CDF tables.
//
// State is a 32-bit range and a low end with one carry bit; each symbol
// narrows the range to [floor(R*c_lo/2^16), floor(R*c_hi/2^16)) and the coder
// renormalizes whenever the range drops below 2^24, emitting the top byte of
// low most-significant first. Carries into already-produced 0xFF bytes are
// resolved with a pending-byte counter. Splitting with a full-width product
// (rather than R/2^16 first) keeps the per-symbol overhead below 2^-20 bits.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sapm {

inline constexpr std::uint32_t kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;

struct CdfTable {
  // Symbol value of the first regular bin.
  int offset = 0;
  // Cumulative frequencies: cdf.front() == 0, cdf.back() == 65536, strictly
  // increasing. Bin i spans [cdf[i], cdf[i + 1]).
  std::vector<std::uint32_t> cdf;
  // When set, bin 0 and the last bin are escape bins for values below/above
  // the regular range; an escaped value follows as a raw 16-bit word.
  bool escapes = false;

  std::size_t bins() const { return cdf.empty() ? 0 : cdf.size() - 1; }
  int min_symbol() const { return offset; }
  int max_symbol() const;
  // Throws FormatError unless the table is a valid strictly monotone CDF.
  void validate() const;
};

struct CodedBuffer {
  std::vector<std::uint8_t> bytes;
  std::size_t symbols = 0;
};

class RangeEncoder {
 public:
  void encode(int symbol, const CdfTable& table);
  // Encodes an interval [cum, cum + freq) of a 2^16 total directly.
  void encode_interval(std::uint32_t cum, std::uint32_t freq);
  void encode_raw16(std::uint16_t value) { encode_interval(value, 1); }
  // Terminates the stream; the encoder must not be used afterwards.
  std::vector<std::uint8_t> finish();
  std::size_t symbols() const { return symbols_; }

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint64_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  bool have_cache_ = false;
  std::uint64_t pending_ = 0;
  std::size_t symbols_ = 0;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);
  int decode(const CdfTable& table);
  std::uint32_t decode_interval(std::span<const std::uint32_t> cdf);
  std::uint16_t decode_raw16();
  // Throws FormatError if decoding ran past the end of a truncated buffer.
  void finish() const;

 private:
  std::uint8_t next_byte();
  void normalize();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t overrun_ = 0;
  std::uint64_t code_ = 0;
  std::uint64_t range_ = 0xFFFFFFFFu;
};

// One table per symbol, or a single table shared by all symbols.
CodedBuffer range_encode(std::span<const int> symbols, std::span<const CdfTable> tables);
std::vector<int> range_decode(const CodedBuffer& buf, std::span<const CdfTable> tables);

// Ideal code length of `symbols` under the quantized tables, in bits
// (escape raw words count 16 bits).
double table_code_length_bits(std::span<const int> symbols, std::span<const CdfTable> tables);

}  // namespace sapm
