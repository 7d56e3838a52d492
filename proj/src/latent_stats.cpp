#include "sapm/latent_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "sapm/entropy.hpp"
#include "sapm/errors.hpp"

namespace sapm {

namespace {

void require_samples(std::span<const double> s) {
  if (s.empty()) throw std::invalid_argument("no samples to fit");
}

double gaussian_cdf(double x, double mean, double std) {
  return 0.5 * std::erfc(-(x - mean) / (std * std::numbers::sqrt2));
}

}  // namespace

GaussianFit fit_gaussian(std::span<const double> s) {
  require_samples(s);
  const double n = static_cast<double>(s.size());
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : s) var += (v - mean) * (v - mean);
  var /= n;
  GaussianFit f;
  f.mean = mean;
  f.std = std::max(std::sqrt(var), kFitScaleFloor);
  double nll = 0.0;
  for (double v : s) {
    const double z = (v - mean) / f.std;
    nll += 0.5 * z * z;
  }
  f.nll = nll / n + std::log(f.std) + 0.5 * std::log(2.0 * std::numbers::pi);
  return f;
}

LaplaceFit fit_laplace(std::span<const double> s) {
  require_samples(s);
  std::vector<double> sorted(s.begin(), s.end());
  const std::size_t mid = (sorted.size() - 1) / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  LaplaceFit f;
  f.location = sorted[mid];
  double mad = 0.0;
  for (double v : s) mad += std::abs(v - f.location);
  const double n = static_cast<double>(s.size());
  f.scale = std::max(mad / n, kFitScaleFloor);
  double acc = 0.0;
  for (double v : s) acc += std::abs(v - f.location);
  f.nll = acc / (n * f.scale) + std::log(2.0 * f.scale);
  return f;
}

double gaussian_discrete_nll(std::span<const double> s, const GaussianFit& fit) {
  require_samples(s);
  double acc = 0.0;
  for (double v : s) {
    const double r = std::round(v);
    const double p = gaussian_cdf(r + 0.5, fit.mean, fit.std) - gaussian_cdf(r - 0.5, fit.mean, fit.std);
    acc -= std::log(std::max(p, kProbFloor));
  }
  return acc / static_cast<double>(s.size());
}

double laplace_discrete_nll(std::span<const double> s, const LaplaceFit& fit) {
  require_samples(s);
  double acc = 0.0;
  for (double v : s)
    acc -= std::log(std::max(laplace_bin_mass(std::round(v), fit.location, fit.scale), kProbFloor));
  return acc / static_cast<double>(s.size());
}

double Histogram::edge(std::size_t i) const {
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size());
}

Histogram histogram(std::span<const double> s, std::size_t bins) {
  require_samples(s);
  Histogram h;
  const auto [a, b] = std::minmax_element(s.begin(), s.end());
  h.lo = *a;
  h.hi = *b;
  h.counts.assign(bins, 0);
  const double width = h.hi - h.lo;
  for (double v : s) {
    std::size_t i = width > 0 ? static_cast<std::size_t>((v - h.lo) / width * static_cast<double>(bins)) : 0;
    ++h.counts[std::min(i, bins - 1)];
  }
  return h;
}

std::vector<LatentFitReport> analyze_tensor(const Tensor& y, const std::vector<std::size_t>& channels,
                                            bool discrete) {
  const Shape& s = y.shape();
  if (s.rank() != 4 || s.numel() == 0) throw ShapeError("analyze_tensor expects a non-empty NCHW tensor");
  std::vector<std::size_t> sel = channels;
  if (sel.empty())
    for (std::size_t c = 0; c < s.c(); ++c) sel.push_back(c);
  const std::size_t plane = s.h() * s.w();
  std::vector<LatentFitReport> out;
  for (std::size_t c : sel) {
    if (c >= s.c()) throw std::out_of_range("channel " + std::to_string(c) + " out of range");
    std::vector<double> v;
    v.reserve(s.n() * plane);
    for (std::size_t n = 0; n < s.n(); ++n) {
      const auto d = y.data().subspan((n * s.c() + c) * plane, plane);
      v.insert(v.end(), d.begin(), d.end());
    }
    LatentFitReport r;
    r.channel = c;
    r.samples = v.size();
    r.hist = histogram(v);
    r.gaussian = fit_gaussian(v);
    r.laplace = fit_laplace(v);
    if (discrete) {
      r.gaussian.nll = gaussian_discrete_nll(v, r.gaussian);
      r.laplace.nll = laplace_discrete_nll(v, r.laplace);
    }
    r.laplace_wins = r.laplace.nll < r.gaussian.nll;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<LatentFitReport> analyze_latents(Model& model, const std::vector<Image>& images,
                                             const std::vector<std::size_t>& channels, bool discrete) {
  if (images.empty()) throw std::invalid_argument("analyze_latents: empty image set");
  const std::size_t f = model.config.downsample();
  std::vector<Tensor> ys;
  for (const Image& img : images)
    ys.push_back(model.encode(image_to_tensor(img, round_up(img.width, f), round_up(img.height, f)),
                              IdMode::kInfer));
  // Concatenate along the batch axis; images of different sizes are pooled
  // channel by channel.
  std::size_t total = 0;
  for (const auto& y : ys) total += y.shape().h() * y.shape().w();
  const std::size_t c = ys.front().shape().c();
  Tensor all(Shape{1, c, 1, total});
  std::size_t off = 0;
  for (const auto& y : ys) {
    const std::size_t plane = y.shape().h() * y.shape().w();
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(y.data().begin() + static_cast<std::ptrdiff_t>(ch * plane), plane,
                  all.data().begin() + static_cast<std::ptrdiff_t>(ch * total + off));
    off += plane;
  }
  return analyze_tensor(all, channels, discrete);
}

double laplace_winner_fraction(const std::vector<LatentFitReport>& reports) {
  if (reports.empty()) return 0.0;
  std::size_t wins = 0;
  for (const auto& r : reports) wins += r.laplace_wins ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(reports.size());
}

std::string summary_csv(const std::vector<LatentFitReport>& reports) {
  std::ostringstream o;
  o << "channel,samples,gauss_mean,gauss_std,gauss_nll,laplace_loc,laplace_scale,laplace_nll,winner\n";
  char line[256];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.6g,%.6g,%.6f,%.6g,%.6g,%.6f,%s\n", r.channel, r.samples,
                  r.gaussian.mean, r.gaussian.std, r.gaussian.nll, r.laplace.location, r.laplace.scale,
                  r.laplace.nll, r.laplace_wins ? "laplace" : "gaussian");
    o << line;
  }
  return o.str();
}

std::string plot_csv(const LatentFitReport& r) {
  std::ostringstream o;
  o << "bin_center,density,gaussian_pdf,laplace_pdf\n";
  const std::size_t bins = r.hist.counts.size();
  const double width = (r.hist.hi - r.hist.lo) / static_cast<double>(bins);
  char line[160];
  for (std::size_t i = 0; i < bins; ++i) {
    const double x = r.hist.edge(i) + 0.5 * width;
    const double density = width > 0 ? static_cast<double>(r.hist.counts[i]) / (r.samples * width) : 0.0;
    const double zg = (x - r.gaussian.mean) / r.gaussian.std;
    const double g = std::exp(-0.5 * zg * zg) / (r.gaussian.std * std::sqrt(2.0 * std::numbers::pi));
    const double l = std::exp(-std::abs(x - r.laplace.location) / r.laplace.scale) / (2.0 * r.laplace.scale);
    std::snprintf(line, sizeof line, "%.6g,%.6g,%.6g,%.6g\n", x, density, g, l);
    o << line;
  }
  return o.str();
}

}  // namespace sapm
