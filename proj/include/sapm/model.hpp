#pragma once

// The full codec network.
//
//   encoder:        conv s2, GDN, (SAPM-E s2, GDN) x (levels - 2), SAPM-E s2     -> y
//   decoder:        (SAPM-D r2, IGDN) x (levels - 1), transposed conv s2         -> x_hat
//   hyper encoder:  conv k3 s1, leaky, conv k5 s2, leaky, conv k5 s2             -> z
//   hyper decoder:  tconv k5 s2, leaky, tconv k5 s2, leaky, conv k3 -> 3 K M     -> LMM
//
// z is coded under a per-channel Laplace prior.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sapm/config.hpp"
#include "sapm/entropy.hpp"
#include "sapm/implicit_deconv.hpp"
#include "sapm/ops.hpp"
#include "sapm/sapm_blocks.hpp"
#include "sapm/tensor.hpp"

namespace sapm {

struct ModelConfig {
  std::size_t channels = 32;         // N
  std::size_t latent_channels = 32;  // M
  std::size_t levels = 3;
  std::size_t mixtures = 3;          // K
  std::size_t kernel = 5;
  double lambda = 512.0;
  int p_min = -8;
  int p_max = 4;
  double leaky_slope = 0.01;
  std::uint64_t seed = 1;

  // Spatial factor between the image and z.
  std::size_t downsample() const { return std::size_t{1} << (levels + 2); }
  void validate() const;
  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
  // One-byte fingerprint of the architecture (lambda and seed excluded).
  std::uint8_t id() const;
};

struct ConvLayer {
  Tensor weight;  // conv: (Cout, Cin, k, k); transposed: (Cin, Cout, k, k)
  Tensor bias;
  std::size_t stride = 1, pad = 0, output_pad = 0;
  bool transposed = false;

  Tensor forward(const Tensor& x) const;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Model {
  ModelConfig config;

  ConvLayer enc_in;
  std::vector<SapmEBlock> enc_blocks;
  std::vector<GDNParams> enc_gdn;  // after enc_in and every SAPM-E but the last

  std::vector<SapmDBlock> dec_blocks;
  std::vector<GDNParams> dec_igdn;  // after every SAPM-D
  ConvLayer dec_out;

  std::vector<ConvLayer> hyper_enc;
  std::vector<ConvLayer> hyper_dec;
  FactorizedParams prior;

  static Model init(const ModelConfig& config);

  Tensor encode(const Tensor& x, IdMode mode);
  Tensor decode(const Tensor& y_hat, IdMode mode);
  Tensor hyper_encode(const Tensor& y) const;
  LmmParams hyper_decode(const Tensor& z_hat) const;

  // Trainable tensors, in a fixed order.
  NamedTensors named_parameters() const;
  // Trainable tensors followed by the running whitening statistics.
  NamedTensors named_state() const;
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> adder_filters() const;
  std::size_t parameter_count() const;
};

// Checkpoint file: "SAPMCKPT", version, config text, one record per tensor of
// named_state() with values stored as little-endian float32.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace sapm
