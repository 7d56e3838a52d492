#pragma once

// Image <-> bitstream.
//
// Layout (little-endian): "SAPM", version u8, width u16, height u16,
// padded width u16, padded height u16, config id u8, K u8, y support
// (i16 min, i16 max), z support (i16 min, i16 max), z length u32, z bytes,
// y length u32, y bytes.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sapm/image.hpp"
#include "sapm/model.hpp"

namespace sapm {

inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 31;
inline constexpr int kSupportLimit = 255;

struct Bitstream {
  std::uint16_t width = 0, height = 0, padded_width = 0, padded_height = 0;
  std::uint8_t config_id = 0, mixtures = 0;
  std::int16_t y_min = 0, y_max = 0, z_min = 0, z_max = 0;
  std::vector<std::uint8_t> z_bytes, y_bytes;

  std::vector<std::uint8_t> serialize() const;
  static Bitstream parse(const std::vector<std::uint8_t>& bytes);
  std::size_t size_bytes() const { return kHeaderBytes + z_bytes.size() + y_bytes.size(); }
};

struct CompressResult {
  Bitstream stream;
  Tensor y_hat, z_hat;
  double estimated_bits_y = 0.0;  // sum of -log2 p under the model
  double estimated_bits_z = 0.0;
};

struct DecompressResult {
  Image image;
  Tensor y_hat, z_hat;
};

// Coding support for a tensor of integers: [min - 2, max + 2] clamped to +-255.
std::pair<int, int> coding_support(const Tensor& q);

CompressResult compress(const Image& image, Model& model);
DecompressResult decompress(const Bitstream& stream, Model& model);

// Runs the decoder on the given latents, bypassing the entropy coder.
Image reconstruct(const Tensor& y_hat, Model& model, std::size_t width, std::size_t height);

double bits_per_pixel(const Bitstream& stream);

}  // namespace sapm
