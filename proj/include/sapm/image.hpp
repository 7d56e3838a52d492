#pragma once

// 8-bit RGB images, PPM I/O, a seeded synthetic image source, and quality
// metrics.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sapm/tensor.hpp"

namespace sapm {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Binary PPM (P6) with maxval 255.
Image read_ppm(const std::string& path);
Image parse_ppm(const std::vector<std::uint8_t>& bytes);
void write_ppm(const Image& img, const std::string& path);
std::vector<std::uint8_t> encode_ppm(const Image& img);

// Images as a (N, 3, H, W) tensor in [0, 1], each padded on the right and
// bottom by edge replication to (padded_w, padded_h).
Tensor images_to_tensor(const std::vector<Image>& images, std::size_t padded_w, std::size_t padded_h);
Tensor image_to_tensor(const Image& img, std::size_t padded_w, std::size_t padded_h);
// Clips to [0, 1], rounds to 8 bits and crops to (width, height).
Image tensor_to_image(const Tensor& t, std::size_t index, std::size_t width, std::size_t height);

std::size_t round_up(std::size_t v, std::size_t multiple);

Image crop(const Image& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

// Smooth gradients, soft-edged shapes and multi-octave value-noise texture.
Image synthetic_image(std::size_t width, std::size_t height, std::uint64_t seed);

// Sentinel returned by psnr for identical images.
inline constexpr double kPsnrIdentical = 1e9;
double psnr(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);

struct MsSsim {
  double value = 1.0;
  std::size_t scales = 5;  // fewer than 5 when the image is under 176 px on a side
};
MsSsim ms_ssim(const Image& a, const Image& b);

}  // namespace sapm
