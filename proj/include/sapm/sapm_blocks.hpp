#pragma once

// Shift-addition parallel modules.
//
// SAPM-E (downsampling by s):
//   Y = shift_conv(X) + ID(adder_conv(X)) + channel_adapt(avg_pool(X, s, s))
// SAPM-D (upsampling by r), all branches at the input resolution and one
// pixel shuffle of their sum. The adder gives Cout channels, which ID whitens
// and widens to Cout * r^2; the other branches give Cout * r^2 directly:
//   Y = PS(shift_conv(X) + ID(adder_conv(X)) + conv1x1(X))

#include <cstddef>
#include <vector>

#include "sapm/implicit_deconv.hpp"
#include "sapm/ops.hpp"
#include "sapm/rng.hpp"
#include "sapm/tensor.hpp"

namespace sapm {

struct SapmOptions {
  std::size_t kernel = 5;
  ShiftRange shift_range{};
  bool shift_bias = false;
  // The ID that follows the adder layer removes any per-channel constant,
  // so an adder bias receives no gradient in training; off by default.
  bool adder_bias = false;
  double id_eps = 1e-5;
};

// Branch switches, for decomposition checks and ablations.
struct SapmBranches {
  bool shift = true;
  bool adder = true;
  bool shortcut = true;
};

struct SapmEBlock {
  std::size_t cin = 0, cout = 0, stride = 2;
  SapmOptions options;
  ShiftWeights shift;
  AdderFilters adder;
  IDParams id;

  static SapmEBlock create(std::size_t cin, std::size_t cout, std::size_t stride,
                           const SapmOptions& options, Rng& rng);
  std::vector<Tensor> parameters() const;
};

struct SapmDBlock {
  std::size_t cin = 0, cout = 0, upscale = 2;
  SapmOptions options;
  ShiftWeights shift;
  AdderFilters adder;
  IDParams id;
  Tensor shortcut_weight;  // (cout * r^2, cin, 1, 1)
  Tensor shortcut_bias;    // (cout * r^2)

  static SapmDBlock create(std::size_t cin, std::size_t cout, std::size_t upscale,
                           const SapmOptions& options, Rng& rng);
  std::vector<Tensor> parameters() const;
};

Tensor sapm_e_forward(const Tensor& x, SapmEBlock& block, IdMode mode,
                      SapmBranches branches = {});
Tensor sapm_d_forward(const Tensor& x, SapmDBlock& block, IdMode mode,
                      SapmBranches branches = {});

// Centered uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0);

}  // namespace sapm
