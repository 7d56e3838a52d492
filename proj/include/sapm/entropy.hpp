#pragma once

// Discretized likelihoods for quantized latents.
//
// y-hat uses a K-component Laplace mixture whose parameters come from the
// hyper decoder; z-hat uses a per-channel Laplace with learned location and
// scale. Both integrate the density over the unit bin [v - 0.5, v + 0.5] and
// floor the result at kProbFloor.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sapm/range_coder.hpp"
#include "sapm/tensor.hpp"

namespace sapm {

inline constexpr double kProbFloor = 1e-9;
inline constexpr double kScaleMin = 0.01;
inline constexpr std::size_t kMaxMixtures = 5;

double laplace_cdf(double x, double mu, double b);
// F(v + 0.5) - F(v - 0.5), evaluated without cancellation in the tails.
double laplace_bin_mass(double v, double mu, double b);

struct LaplaceMixture {
  std::size_t k = 1;
  std::array<double, kMaxMixtures> weight{};
  std::array<double, kMaxMixtures> mean{};
  std::array<double, kMaxMixtures> scale{};

  double cdf(double x) const;
  double bin_mass(double v) const;
};

// View of the hyper-decoder output, shape (N, 3 K M, H, W), laid out as
// [weight logits | means | scale pre-activations], each block K*M channels
// with component k of latent channel c at k*M + c.
struct LmmParams {
  Tensor raw;
  std::size_t mixtures = 3;

  std::size_t channels() const { return raw.shape().c() / (3 * mixtures); }
  LaplaceMixture at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
  // Throws ShapeError unless raw has 3 K M channels for the given M.
  void check(const Shape& latent) const;
};

// Per-element probability of y_hat (same shape as the latent), differentiable
// in y_hat and in params.raw.
Tensor lmm_likelihood(const Tensor& y_hat, const LmmParams& params);

struct FactorizedParams {
  Tensor mean;       // (C)
  Tensor scale_raw;  // (C); b = kScaleMin + softplus(scale_raw)

  static FactorizedParams init(std::size_t channels, double scale = 1.0);
  std::size_t channels() const { return mean.numel(); }
  double scale(std::size_t c) const;
  LaplaceMixture at(std::size_t c) const;
};

Tensor factorized_likelihood(const Tensor& z_hat, const FactorizedParams& params);

// Sum of -log2 p. The tensor form is differentiable and returns a scalar.
Tensor rate_bits(const Tensor& probabilities);
double rate_bits(std::span<const double> probabilities);

// Integer frequencies summing to 65536 with at least 1 per symbol: each
// symbol gets 1 + floor(p * (65536 - n)), the leftover counts go to the
// largest fractional remainders (ties to the lower index). Returns the CDF.
std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf);

// Table over [y_min, y_max] plus low/high escape bins holding the tail mass.
CdfTable build_cdf_table(const LaplaceMixture& model, int y_min, int y_max);

}  // namespace sapm
