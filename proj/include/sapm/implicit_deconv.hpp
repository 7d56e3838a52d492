#pragma once

// 1x1 implicit deconvolution: per-batch whitening of the channel covariance,
// folded into a 1x1 mixing layer.
//
//   Cov = (1/N') (X - mu)^T (X - mu),   D = (Cov + eps I)^(-1/2)
//   Y   = (X - mu) D W^T = X (D W^T) - mu (D W^T)
//
// X is viewed as N' = N*H*W samples of C features. D is obtained from a
// symmetric eigendecomposition with the eigenvalues floored at zero before
// adding eps. Training mode differentiates through mu and D and updates the
// running estimates; inference mode uses the running estimates as constants.

#include <cstddef>
#include <span>
#include <vector>

#include "sapm/tensor.hpp"

namespace sapm {

struct IDParams {
  Tensor weight;          // (Cout, Cin) 1x1 mixing weights
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  Tensor running_mean;    // (Cin)
  Tensor running_whiten;  // (Cin, Cin)

  // W = I, running mean 0, running whitening I.
  static IDParams identity_init(std::size_t channels, double eps = 1e-5);
  // Widening form: W is (channels * copies, channels) with row o reading
  // input o / copies, so each input channel is repeated `copies` times.
  static IDParams replicate_init(std::size_t channels, std::size_t copies, double eps = 1e-5);
};

enum class IdMode { kTrain, kInfer };

// Whitening statistics of a feature-major sample matrix (C rows, N' columns).
struct WhiteningStats {
  std::vector<double> mean;         // C
  std::vector<double> covariance;   // C x C
  std::vector<double> whiten;       // C x C, D
  std::vector<double> eigenvalues;  // ascending
  std::vector<double> eigenvectors; // C x C, column i pairs with eigenvalue i
};

WhiteningStats whitening_stats(std::span<const double> samples, std::size_t channels,
                               std::size_t count, double eps);

Tensor implicit_deconv_1x1(const Tensor& x, IDParams& p, IdMode mode, bool update_running = true);

// Independent evaluation routes over feature-major samples, used to check the
// folding identity: explicit computes ((x - mu) D) W^T per sample, folded
// computes x (D W^T) - mu (D W^T).
std::vector<double> id_apply_explicit(std::span<const double> samples, std::size_t channels,
                                      std::size_t count, std::span<const double> mean,
                                      std::span<const double> whiten,
                                      std::span<const double> weight, std::size_t cout);
std::vector<double> id_apply_folded(std::span<const double> samples, std::size_t channels,
                                    std::size_t count, std::span<const double> mean,
                                    std::span<const double> whiten,
                                    std::span<const double> weight, std::size_t cout);

}  // namespace sapm
