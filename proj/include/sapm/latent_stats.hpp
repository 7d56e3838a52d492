#pragma once

// Gaussian versus Laplace maximum-likelihood fits of latent channels.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sapm/image.hpp"
#include "sapm/model.hpp"

namespace sapm {

inline constexpr double kFitScaleFloor = 1e-6;
inline constexpr std::size_t kHistogramBins = 101;

struct GaussianFit {
  double mean = 0, std = 0, nll = 0;  // nll: mean negative log-likelihood, nats
};
struct LaplaceFit {
  double location = 0, scale = 0, nll = 0;
};

GaussianFit fit_gaussian(std::span<const double> samples);
// Location is the lower median; scale the mean absolute deviation from it.
LaplaceFit fit_laplace(std::span<const double> samples);

// Mean NLL of samples rounded to integers under the fitted distributions'
// unit-bin masses (floored at 1e-9), in nats.
double gaussian_discrete_nll(std::span<const double> samples, const GaussianFit& fit);
double laplace_discrete_nll(std::span<const double> samples, const LaplaceFit& fit);

struct Histogram {
  double lo = 0, hi = 0;
  std::vector<std::size_t> counts;  // kHistogramBins equal bins over [lo, hi]
  double edge(std::size_t i) const;
};
Histogram histogram(std::span<const double> samples, std::size_t bins = kHistogramBins);

struct LatentFitReport {
  std::size_t channel = 0;
  std::size_t samples = 0;
  Histogram hist;
  GaussianFit gaussian;
  LaplaceFit laplace;
  bool laplace_wins = false;  // lower mean NLL
};

// y: (N, C, H, W). Empty `channels` selects every channel.
std::vector<LatentFitReport> analyze_tensor(const Tensor& y, const std::vector<std::size_t>& channels,
                                            bool discrete = false);
// Encodes the images (pre-quantization y, inference mode) and analyzes y.
std::vector<LatentFitReport> analyze_latents(Model& model, const std::vector<Image>& images,
                                             const std::vector<std::size_t>& channels,
                                             bool discrete = false);

double laplace_winner_fraction(const std::vector<LatentFitReport>& reports);
std::string summary_csv(const std::vector<LatentFitReport>& reports);
// Histogram densities and both fitted densities at bin centers.
std::string plot_csv(const LatentFitReport& report);

}  // namespace sapm
