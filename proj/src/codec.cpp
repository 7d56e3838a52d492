#include "sapm/codec.hpp"

#include <algorithm>
#include <cmath>

#include "sapm/bytes.hpp"
#include "sapm/errors.hpp"
#include "sapm/range_coder.hpp"

namespace sapm {

namespace {

constexpr std::string_view kMagic = "SAPM";

Tensor round_tensor(const Tensor& t) {
  Tensor out(t.shape());
  auto o = out.data();
  const auto v = t.data();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = round_half_away(v[i]);
  return out;
}

int to_symbol(double v) {
  if (!std::isfinite(v) || std::abs(v) > 32767.0) throw NumericError("latent value out of 16-bit range");
  return static_cast<int>(v);
}

// z: per-channel prior tables, shared by all positions of a channel.
std::vector<CdfTable> z_tables(const Model& model, int lo, int hi) {
  std::vector<CdfTable> t;
  for (std::size_t c = 0; c < model.prior.channels(); ++c) t.push_back(build_cdf_table(model.prior.at(c), lo, hi));
  return t;
}

}  // namespace

std::vector<std::uint8_t> Bitstream::serialize() const {
  ByteWriter w;
  w.raw(kMagic);
  w.u8(kBitstreamVersion);
  w.u16(width);
  w.u16(height);
  w.u16(padded_width);
  w.u16(padded_height);
  w.u8(config_id);
  w.u8(mixtures);
  w.i16(y_min);
  w.i16(y_max);
  w.i16(z_min);
  w.i16(z_max);
  w.u32(static_cast<std::uint32_t>(z_bytes.size()));
  w.raw(z_bytes);
  w.u32(static_cast<std::uint32_t>(y_bytes.size()));
  w.raw(y_bytes);
  return std::move(w.bytes());
}

Bitstream Bitstream::parse(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "bitstream");
  if (r.str(kMagic.size()) != kMagic) throw FormatError("not a SAPM bitstream (bad magic)");
  if (r.u8() != kBitstreamVersion) throw FormatError("unsupported bitstream version");
  Bitstream b;
  b.width = r.u16();
  b.height = r.u16();
  b.padded_width = r.u16();
  b.padded_height = r.u16();
  b.config_id = r.u8();
  b.mixtures = r.u8();
  b.y_min = r.i16();
  b.y_max = r.i16();
  b.z_min = r.i16();
  b.z_max = r.i16();
  const auto zl = r.u32();
  const auto zb = r.raw(zl);
  b.z_bytes.assign(zb.begin(), zb.end());
  const auto yl = r.u32();
  const auto yb = r.raw(yl);
  b.y_bytes.assign(yb.begin(), yb.end());
  if (r.remaining() != 0) throw FormatError("bitstream has trailing bytes");
  if (b.width == 0 || b.height == 0 || b.width > b.padded_width || b.height > b.padded_height)
    throw FormatError("bitstream has inconsistent dimensions");
  if (b.y_min >= b.y_max || b.z_min >= b.z_max) throw FormatError("bitstream has an empty support");
  return b;
}

std::pair<int, int> coding_support(const Tensor& q) {
  const auto v = q.data();
  if (v.empty()) return {-2, 2};
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const int a = std::clamp(to_symbol(*lo) - 2, -kSupportLimit, kSupportLimit - 1);
  const int b = std::clamp(to_symbol(*hi) + 2, a + 1, kSupportLimit);
  return {a, b};
}

CompressResult compress(const Image& image, Model& model) {
  const std::size_t f = model.config.downsample();
  const std::size_t pw = round_up(image.width, f), ph = round_up(image.height, f);
  if (pw > 65535 || ph > 65535) throw ShapeError("image too large for the bitstream format");
  const Tensor x = image_to_tensor(image, pw, ph);

  CompressResult r;
  const Tensor y = model.encode(x, IdMode::kInfer);
  r.z_hat = round_tensor(model.hyper_encode(y));
  r.y_hat = round_tensor(y);
  const LmmParams lmm = model.hyper_decode(r.z_hat);
  lmm.check(r.y_hat.shape());

  Bitstream& b = r.stream;
  b.width = static_cast<std::uint16_t>(image.width);
  b.height = static_cast<std::uint16_t>(image.height);
  b.padded_width = static_cast<std::uint16_t>(pw);
  b.padded_height = static_cast<std::uint16_t>(ph);
  b.config_id = model.config.id();
  b.mixtures = static_cast<std::uint8_t>(model.config.mixtures);

  const auto [zlo, zhi] = coding_support(r.z_hat);
  b.z_min = static_cast<std::int16_t>(zlo);
  b.z_max = static_cast<std::int16_t>(zhi);
  {
    const auto tables = z_tables(model, zlo, zhi);
    const Shape& s = r.z_hat.shape();
    const std::size_t plane = s.h() * s.w();
    RangeEncoder enc;
    const auto zv = r.z_hat.data();
    for (std::size_t i = 0; i < zv.size(); ++i) enc.encode(to_symbol(zv[i]), tables[(i / plane) % s.c()]);
    b.z_bytes = enc.finish();
  }

  const auto [ylo, yhi] = coding_support(r.y_hat);
  b.y_min = static_cast<std::int16_t>(ylo);
  b.y_max = static_cast<std::int16_t>(yhi);
  {
    const Shape& s = r.y_hat.shape();
    RangeEncoder enc;
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t h = 0; h < s.h(); ++h)
        for (std::size_t w = 0; w < s.w(); ++w)
          enc.encode(to_symbol(r.y_hat.at(0, c, h, w)), build_cdf_table(lmm.at(0, c, h, w), ylo, yhi));
    b.y_bytes = enc.finish();
  }

  r.estimated_bits_y = rate_bits(lmm_likelihood(r.y_hat, lmm).data());
  r.estimated_bits_z = rate_bits(factorized_likelihood(r.z_hat, model.prior).data());
  return r;
}

DecompressResult decompress(const Bitstream& b, Model& model) {
  if (b.config_id != model.config.id() || b.mixtures != model.config.mixtures)
    throw FormatError("bitstream was produced with a different model configuration");
  const std::size_t f = model.config.downsample();
  if (b.padded_width % f != 0 || b.padded_height % f != 0 ||
      b.padded_width != round_up(b.width, f) || b.padded_height != round_up(b.height, f))
    throw FormatError("bitstream padding does not match the model");
  const std::size_t ys = std::size_t{1} << model.config.levels;
  const Shape zs{1, model.config.channels, b.padded_height / f, b.padded_width / f};
  const Shape yshape{1, model.config.latent_channels, b.padded_height / ys, b.padded_width / ys};

  DecompressResult r;
  r.z_hat = Tensor(zs);
  {
    const auto tables = z_tables(model, b.z_min, b.z_max);
    const std::size_t plane = zs.h() * zs.w();
    RangeDecoder dec(b.z_bytes);
    auto zv = r.z_hat.data();
    for (std::size_t i = 0; i < zv.size(); ++i) zv[i] = dec.decode(tables[(i / plane) % zs.c()]);
    dec.finish();
  }
  const LmmParams lmm = model.hyper_decode(r.z_hat);
  lmm.check(yshape);
  r.y_hat = Tensor(yshape);
  {
    RangeDecoder dec(b.y_bytes);
    for (std::size_t c = 0; c < yshape.c(); ++c)
      for (std::size_t h = 0; h < yshape.h(); ++h)
        for (std::size_t w = 0; w < yshape.w(); ++w)
          r.y_hat.at(0, c, h, w) = dec.decode(build_cdf_table(lmm.at(0, c, h, w), b.y_min, b.y_max));
    dec.finish();
  }
  r.image = reconstruct(r.y_hat, model, b.width, b.height);
  return r;
}

Image reconstruct(const Tensor& y_hat, Model& model, std::size_t width, std::size_t height) {
  return tensor_to_image(model.decode(y_hat, IdMode::kInfer), 0, width, height);
}

double bits_per_pixel(const Bitstream& stream) {
  return 8.0 * static_cast<double>(stream.size_bytes()) /
         (static_cast<double>(stream.width) * stream.height);
}

}  // namespace sapm
