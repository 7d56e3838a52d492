#pragma once

// Differentiable layer primitives on rank-4 NCHW tensors.

#include <cstddef>

#include "sapm/rng.hpp"
#include "sapm/tensor.hpp"

namespace sapm {

// Standard cross-correlation. w: (Cout, Cin, k, k); bias: (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad);

// Adjoint of conv2d with respect to its input. w: (Cin, Cout, k, k).
// Output extent: (H - 1) * stride - 2 * pad + k + output_pad.
Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                         std::size_t pad, std::size_t output_pad);

// ---------------------------------------------------------------------------
// Power-of-two weight quantization.

struct ShiftRange {
  int p_min = -8;
  int p_max = 4;
};

struct ShiftQuantized {
  Tensor sign;      // +1 / -1, sign(0) = +1
  Tensor exponent;  // integer-valued, within [p_min, p_max]
  Tensor weight;    // sign * 2^exponent
};

// Rounds |w| to the nearest power of two in the log domain; exponents are
// clamped to the range, so zero and underflowing weights become +-2^p_min.
double shift_quantize_value(double w, ShiftRange range, int* exponent = nullptr);
ShiftQuantized shift_quantize(const Tensor& w, ShiftRange range);

// Quantized copy of w whose backward passes gradients straight through.
Tensor shift_quantize_ste(const Tensor& w, ShiftRange range);

struct ShiftWeights {
  Tensor weight;  // master real-valued kernel (Cout, Cin, k, k)
  Tensor bias;    // optional
  ShiftRange range;
};

// conv2d with the quantized kernel; the master weights receive the kernel
// gradient unchanged and the input gradient uses the quantized kernel.
Tensor shift_conv2d(const Tensor& x, const ShiftWeights& sw, std::size_t stride, std::size_t pad);

// ---------------------------------------------------------------------------
// Adder (negative L1) convolution.

struct AdderFilters {
  Tensor filters;  // (Cout, Cin, k, k)
  Tensor bias;     // optional
};

// y = -sum |x - f| (+ bias). Backward uses the full-precision filter surrogate
// (x - f) and the clipped input surrogate clip(f - x, -1, 1).
Tensor adder_conv2d(const Tensor& x, const AdderFilters& af, std::size_t stride, std::size_t pad);

// Rescales a gradient buffer in place to norm eta * sqrt(numel); a zero
// gradient is left alone.
void adaptive_gradient_scale(std::span<double> grad, double eta);

// ---------------------------------------------------------------------------

Tensor avg_pool2d(const Tensor& x, std::size_t k, std::size_t stride);

// (N, C r^2, H, W) -> (N, C, rH, rW): out(n, c, r h + a, r w + b) = in(n, c r^2 + a r + b, h, w).
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

// Repeats input channels cyclically (or truncates) to reach `cout` channels.
Tensor channel_adapt(const Tensor& x, std::size_t cout);

Tensor leaky_relu(const Tensor& x, double slope);
Tensor softplus(const Tensor& x);
double softplus_value(double x);
double inverse_softplus_value(double y);

// ---------------------------------------------------------------------------
// Generalized divisive normalization.

// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); inverse multiplies.
// beta: (C); gamma: (C, C) with row i holding gamma_i*.
Tensor gdn(const Tensor& x, const Tensor& beta, const Tensor& gamma, bool inverse);

// Lower-bounded square reparameterization: value = max(v, bound)^2 - pedestal
// with bound = sqrt(minimum + pedestal). The bound passes gradients that would
// push v back above it.
Tensor nonneg_reparam(const Tensor& v, double minimum);
double nonneg_reparam_storage(double value);

struct GDNParams {
  static constexpr double kBetaMin = 1e-6;

  Tensor beta_storage;   // (C)
  Tensor gamma_storage;  // (C, C)
  bool inverse = false;

  // beta = 1, gamma = gamma_init * I.
  static GDNParams identity_init(std::size_t channels, bool inverse, double gamma_init = 1e-3);
  Tensor beta() const;
  Tensor gamma() const;
};

Tensor gdn(const Tensor& x, const GDNParams& p);

// ---------------------------------------------------------------------------

enum class QuantMode { kNoise, kRound };

double round_half_away(double v);

// Noise mode adds uniform noise in [-0.5, 0.5); round mode rounds half away
// from zero. The backward pass is the identity in both modes.
Tensor quantize_latent(const Tensor& y, QuantMode mode, Rng& rng);

}  // namespace sapm
