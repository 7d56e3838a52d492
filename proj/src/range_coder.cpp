#include "sapm/range_coder.hpp"

#include <cmath>
#include <string>

#include "sapm/errors.hpp"

namespace sapm {

namespace {

constexpr std::uint64_t kTop = 1ull << 24;
constexpr std::uint64_t kMask32 = 0xFFFFFFFFull;

std::uint64_t split(std::uint64_t range, std::uint32_t cum) {
  return (range * cum) >> kCdfPrecisionBits;
}

const CdfTable& table_for(std::span<const CdfTable> tables, std::size_t i) {
  return tables.size() == 1 ? tables[0] : tables[i];
}

// Bin index and optional raw escape word for a symbol.
struct Mapped {
  std::size_t bin;
  bool escaped;
  std::uint16_t raw;
};

Mapped map_symbol(int symbol, const CdfTable& t) {
  const std::size_t bins = t.bins();
  if (!t.escapes) {
    if (symbol < t.offset || symbol > t.max_symbol())
      throw std::out_of_range("symbol " + std::to_string(symbol) + " outside table support");
    return {static_cast<std::size_t>(symbol - t.offset), false, 0};
  }
  if (symbol < -32768 || symbol > 32767)
    throw std::out_of_range("escaped symbol " + std::to_string(symbol) + " exceeds 16 bits");
  const auto raw = static_cast<std::uint16_t>(static_cast<std::int16_t>(symbol));
  if (symbol < t.offset) return {0, true, raw};
  if (symbol > t.max_symbol()) return {bins - 1, true, raw};
  return {static_cast<std::size_t>(symbol - t.offset) + 1, false, 0};
}

}  // namespace

int CdfTable::max_symbol() const {
  const auto regular = static_cast<int>(bins()) - (escapes ? 2 : 0);
  return offset + regular - 1;
}

void CdfTable::validate() const {
  if (cdf.size() < 2 + (escapes ? 2u : 0u)) throw FormatError("CDF table has no regular bins");
  if (cdf.front() != 0 || cdf.back() != kCdfTotal)
    throw FormatError("CDF table must run from 0 to 65536");
  for (std::size_t i = 1; i < cdf.size(); ++i)
    if (cdf[i] <= cdf[i - 1]) throw FormatError("CDF table is not strictly increasing");
}

// ---------------------------------------------------------------------------

void RangeEncoder::shift_low() {
  if (low_ < 0xFF000000ull || low_ > kMask32) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    if (have_cache_) out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
    for (; pending_ > 0; --pending_) out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
    have_cache_ = true;
  } else {
    ++pending_;
  }
  low_ = (low_ << 8) & kMask32;
}

void RangeEncoder::encode_interval(std::uint32_t cum, std::uint32_t freq) {
  const std::uint64_t lo = split(range_, cum);
  const std::uint64_t hi = split(range_, cum + freq);
  low_ += lo;
  range_ = hi - lo;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode(int symbol, const CdfTable& table) {
  const Mapped m = map_symbol(symbol, table);
  encode_interval(table.cdf[m.bin], table.cdf[m.bin + 1] - table.cdf[m.bin]);
  if (m.escaped) encode_raw16(m.raw);
  ++symbols_;
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  if (symbols_ == 0) return {};
  // Any value in [low, low + range) identifies the stream; pick the one with
  // 24 trailing zero bits so only its top byte has to be written.
  low_ = (low_ + (kTop - 1)) & ~(kTop - 1);
  shift_low();
  shift_low();
  return std::move(out_);
}

// ---------------------------------------------------------------------------

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ < bytes_.size()) return bytes_[pos_++];
  ++overrun_;
  return 0;
}

void RangeDecoder::normalize() {
  while (range_ < kTop) {
    code_ = ((code_ << 8) | next_byte()) & kMask32;
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::decode_interval(std::span<const std::uint32_t> cdf) {
  // Largest bin whose lower bound does not exceed code.
  std::size_t lo = 0, hi = cdf.size() - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (split(range_, cdf[mid]) <= code_)
      lo = mid;
    else
      hi = mid;
  }
  const std::uint64_t a = split(range_, cdf[lo]);
  const std::uint64_t b = split(range_, cdf[lo + 1]);
  code_ -= a;
  range_ = b - a;
  normalize();
  return static_cast<std::uint32_t>(lo);
}

std::uint16_t RangeDecoder::decode_raw16() {
  const auto value = static_cast<std::uint32_t>((((code_ + 1) << kCdfPrecisionBits) - 1) / range_);
  const std::uint64_t a = split(range_, value);
  code_ -= a;
  range_ = split(range_, value + 1) - a;
  normalize();
  return static_cast<std::uint16_t>(value);
}

int RangeDecoder::decode(const CdfTable& table) {
  const std::size_t bin = decode_interval(table.cdf);
  if (table.escapes && (bin == 0 || bin + 1 == table.bins()))
    return static_cast<std::int16_t>(decode_raw16());
  return table.offset + static_cast<int>(bin) - (table.escapes ? 1 : 0);
}

void RangeDecoder::finish() const {
  // A complete stream leaves the decoder exactly three bytes of look-ahead
  // past its final byte.
  if (overrun_ > 3) throw FormatError("range-coded buffer is truncated");
}

// ---------------------------------------------------------------------------

CodedBuffer range_encode(std::span<const int> symbols, std::span<const CdfTable> tables) {
  if (!symbols.empty() && tables.size() != 1 && tables.size() != symbols.size())
    throw std::invalid_argument("range_encode needs one table per symbol or one shared table");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(symbols[i], table_for(tables, i));
  return {enc.finish(), symbols.size()};
}

std::vector<int> range_decode(const CodedBuffer& buf, std::span<const CdfTable> tables) {
  std::vector<int> out;
  if (buf.symbols == 0) return out;
  if (tables.size() != 1 && tables.size() != buf.symbols)
    throw std::invalid_argument("range_decode needs one table per symbol or one shared table");
  out.reserve(buf.symbols);
  RangeDecoder dec(buf.bytes);
  for (std::size_t i = 0; i < buf.symbols; ++i) out.push_back(dec.decode(table_for(tables, i)));
  dec.finish();
  return out;
}

double table_code_length_bits(std::span<const int> symbols, std::span<const CdfTable> tables) {
  double bits = 0.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const CdfTable& t = table_for(tables, i);
    const Mapped m = map_symbol(symbols[i], t);
    const double freq = t.cdf[m.bin + 1] - t.cdf[m.bin];
    bits += kCdfPrecisionBits - std::log2(freq);
    if (m.escaped) bits += 16.0;
  }
  return bits;
}

}  // namespace sapm
