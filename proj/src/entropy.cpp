#include "sapm/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "sapm/errors.hpp"
#include "sapm/ops.hpp"

namespace sapm {

namespace {

void check_scale(double b) {
  if (!(b > 0.0) || !std::isfinite(b)) throw DomainError("Laplace scale must be positive");
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct BinTerms {
  double mass;
  double d_mu;  // dm/dmu; dm/dv is its negative
  double d_b;
};

double pdf(double x, double mu, double b) { return std::exp(-std::abs(x - mu) / b) / (2.0 * b); }

BinTerms bin_terms(double v, double mu, double b) {
  const double u = v + 0.5, l = v - 0.5;
  const double pu = pdf(u, mu, b), pl = pdf(l, mu, b);
  return {laplace_bin_mass(v, mu, b), pl - pu, (pl * (l - mu) - pu * (u - mu)) / b};
}

}  // namespace

double laplace_cdf(double x, double mu, double b) {
  check_scale(b);
  if (x == mu) return 0.5;
  const double e = std::exp(-std::abs(x - mu) / b);
  return x > mu ? 1.0 - 0.5 * e : 0.5 * e;
}

double laplace_bin_mass(double v, double mu, double b) {
  check_scale(b);
  const double u = v + 0.5 - mu, l = v - 0.5 - mu;
  const double width = -std::expm1(-1.0 / b);
  if (l >= 0) return 0.5 * std::exp(-l / b) * width;
  if (u <= 0) return 0.5 * std::exp(u / b) * width;
  return 1.0 - 0.5 * std::exp(-u / b) - 0.5 * std::exp(l / b);
}

double LaplaceMixture::cdf(double x) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += weight[i] * laplace_cdf(x, mean[i], scale[i]);
  return acc;
}

double LaplaceMixture::bin_mass(double v) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += weight[i] * laplace_bin_mass(v, mean[i], scale[i]);
  return acc;
}

// ---------------------------------------------------------------------------

void LmmParams::check(const Shape& latent) const {
  if (mixtures < 1 || mixtures > kMaxMixtures)
    throw ShapeError("LMM mixture count must be in 1.." + std::to_string(kMaxMixtures));
  const Shape& r = raw.shape();
  if (latent.rank() != 4 || r.rank() != 4 || r.n() != latent.n() || r.h() != latent.h() ||
      r.w() != latent.w() || r.c() != 3 * mixtures * latent.c())
    throw ShapeError("LMM parameters " + r.str() + " do not match latent " + latent.str() +
                     " with K=" + std::to_string(mixtures));
}

LaplaceMixture LmmParams::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const std::size_t k = mixtures, m = channels();
  LaplaceMixture mix;
  mix.k = k;
  double top = -INFINITY;
  for (std::size_t i = 0; i < k; ++i) top = std::max(top, raw.at(n, i * m + c, h, w));
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mix.weight[i] = std::exp(raw.at(n, i * m + c, h, w) - top);
    total += mix.weight[i];
    mix.mean[i] = raw.at(n, (k + i) * m + c, h, w);
    mix.scale[i] = kScaleMin + softplus_value(raw.at(n, (2 * k + i) * m + c, h, w));
  }
  for (std::size_t i = 0; i < k; ++i) mix.weight[i] /= total;
  return mix;
}

Tensor lmm_likelihood(const Tensor& y_hat, const LmmParams& params) {
  params.check(y_hat.shape());
  const Shape& s = y_hat.shape();
  const std::size_t k = params.mixtures, m = s.c(), plane = s.h() * s.w();
  const std::size_t count = s.numel();
  Tensor p(s);
  auto pv = p.data();
  const auto yv = y_hat.data();
  const auto rv = params.raw.data();

  // Raw offset of block `blk`, component i, for latent element e.
  auto raw_index = [=](std::size_t e, std::size_t blk, std::size_t i) {
    const std::size_t n = e / (m * plane), c = (e / plane) % m, off = e % plane;
    return (n * 3 * k * m + (blk * k + i) * m + c) * plane + off;
  };
  auto mixture = [=](std::size_t e) {
    LaplaceMixture mix;
    mix.k = k;
    double top = -INFINITY;
    for (std::size_t i = 0; i < k; ++i) top = std::max(top, rv[raw_index(e, 0, i)]);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      mix.weight[i] = std::exp(rv[raw_index(e, 0, i)] - top);
      total += mix.weight[i];
      mix.mean[i] = rv[raw_index(e, 1, i)];
      mix.scale[i] = kScaleMin + softplus_value(rv[raw_index(e, 2, i)]);
    }
    for (std::size_t i = 0; i < k; ++i) mix.weight[i] /= total;
    return mix;
  };

  bool finite = true;
#pragma omp parallel for schedule(static) reduction(&& : finite)
  for (std::size_t e = 0; e < count; ++e) {
    const double v = mixture(e).bin_mass(yv[e]);
    finite = finite && std::isfinite(v);
    pv[e] = std::max(v, kProbFloor);
  }
  if (!finite) throw NumericError("lmm_likelihood: non-finite probability");

  Tensor y = y_hat, raw = params.raw;
  if (track(p, {&y, &raw})) {
    record(p, [y, raw, k, count, raw_index, mixture](std::span<const double> g) mutable {
      const auto yv = y.data();
      std::span<double> gy = y.requires_grad() ? y.ensure_grad() : std::span<double>{};
      std::span<double> gr = raw.requires_grad() ? raw.ensure_grad() : std::span<double>{};
      const auto rv = raw.data();
#pragma omp parallel for schedule(static)
      for (std::size_t e = 0; e < count; ++e) {
        if (g[e] == 0.0) continue;
        const LaplaceMixture mix = mixture(e);
        std::array<BinTerms, kMaxMixtures> t{};
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          t[i] = bin_terms(yv[e], mix.mean[i], mix.scale[i]);
          total += mix.weight[i] * t[i].mass;
        }
        if (total < kProbFloor) continue;
        double dy = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          const double w = mix.weight[i];
          dy -= w * t[i].d_mu;
          if (gr.empty()) continue;
          gr[raw_index(e, 0, i)] += g[e] * w * (t[i].mass - total);
          gr[raw_index(e, 1, i)] += g[e] * w * t[i].d_mu;
          gr[raw_index(e, 2, i)] += g[e] * w * t[i].d_b * sigmoid(rv[raw_index(e, 2, i)]);
        }
        if (!gy.empty()) gy[e] += g[e] * dy;
      }
    });
  }
  return p;
}

// ---------------------------------------------------------------------------

FactorizedParams FactorizedParams::init(std::size_t channels, double scale) {
  FactorizedParams f;
  f.mean = Tensor(Shape{channels});
  f.scale_raw = Tensor(Shape{channels}, inverse_softplus_value(scale - kScaleMin));
  f.mean.set_requires_grad(true);
  f.scale_raw.set_requires_grad(true);
  return f;
}

double FactorizedParams::scale(std::size_t c) const {
  return kScaleMin + softplus_value(scale_raw[c]);
}

LaplaceMixture FactorizedParams::at(std::size_t c) const {
  LaplaceMixture mix;
  mix.weight[0] = 1.0;
  mix.mean[0] = mean[c];
  mix.scale[0] = scale(c);
  return mix;
}

Tensor factorized_likelihood(const Tensor& z_hat, const FactorizedParams& params) {
  const Shape& s = z_hat.shape();
  if (s.rank() != 4 || s.c() != params.channels())
    throw ShapeError("factorized prior has " + std::to_string(params.channels()) +
                     " channels, latent is " + s.str());
  const std::size_t c_count = s.c(), plane = s.h() * s.w();
  Tensor p(s);
  auto pv = p.data();
  const auto zv = z_hat.data();
  for (std::size_t e = 0; e < s.numel(); ++e) {
    const std::size_t c = (e / plane) % c_count;
    const double v = laplace_bin_mass(zv[e], params.mean[c], params.scale(c));
    if (!std::isfinite(v)) throw NumericError("factorized_likelihood: non-finite probability");
    pv[e] = std::max(v, kProbFloor);
  }
  Tensor z = z_hat, mu = params.mean, sr = params.scale_raw;
  if (track(p, {&z, &mu, &sr})) {
    record(p, [z, mu, sr, c_count, plane](std::span<const double> g) mutable {
      const auto zv = z.data();
      std::span<double> gz = z.requires_grad() ? z.ensure_grad() : std::span<double>{};
      std::span<double> gm = mu.requires_grad() ? mu.ensure_grad() : std::span<double>{};
      std::span<double> gs = sr.requires_grad() ? sr.ensure_grad() : std::span<double>{};
      for (std::size_t e = 0; e < zv.size(); ++e) {
        const std::size_t c = (e / plane) % c_count;
        const double b = kScaleMin + softplus_value(sr[c]);
        const BinTerms t = bin_terms(zv[e], mu[c], b);
        if (t.mass < kProbFloor) continue;
        if (!gz.empty()) gz[e] -= g[e] * t.d_mu;
        if (!gm.empty()) gm[c] += g[e] * t.d_mu;
        if (!gs.empty()) gs[c] += g[e] * t.d_b * sigmoid(sr[c]);
      }
    });
  }
  return p;
}

// ---------------------------------------------------------------------------

double rate_bits(std::span<const double> probabilities) {
  double bits = 0.0;
  for (double p : probabilities) {
    if (!(p > 0.0)) throw DomainError("rate_bits: probability must be positive");
    bits -= std::log2(p);
  }
  return bits;
}

Tensor rate_bits(const Tensor& probabilities) {
  Tensor out = Tensor::scalar(rate_bits(probabilities.data()));
  Tensor p = probabilities;
  if (track(out, {&p})) {
    record(out, [p](std::span<const double> g) mutable {
      const auto pv = p.data();
      auto gp = p.ensure_grad();
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] -= g[0] / (pv[i] * std::numbers::ln2);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n < 2 || n > kCdfTotal) throw std::invalid_argument("quantize_pmf needs 2..65536 symbols");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("quantize_pmf: invalid probability");
    total += p;
  }
  if (!(total > 0.0)) throw DomainError("quantize_pmf: zero total mass");
  const double avail = static_cast<double>(kCdfTotal - n);
  std::vector<std::uint32_t> freq(n);
  std::vector<double> frac(n);
  std::uint64_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = pmf[i] / total * avail;
    const double whole = std::floor(share);
    freq[i] = 1 + static_cast<std::uint32_t>(whole);
    frac[i] = share - whole;
    used += freq[i];
  }
  if (used > kCdfTotal) throw NumericError("quantize_pmf: rounding overflow");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t j = 0; used < kCdfTotal; ++j, ++used) ++freq[order[j % n]];
  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + freq[i];
  return cdf;
}

CdfTable build_cdf_table(const LaplaceMixture& model, int y_min, int y_max) {
  if (y_min >= y_max) throw std::invalid_argument("build_cdf_table needs y_min < y_max");
  const std::size_t regular = static_cast<std::size_t>(y_max - y_min + 1);
  std::vector<double> pmf(regular + 2);
  pmf.front() = std::max(model.cdf(y_min - 0.5), 0.0);
  pmf.back() = std::max(1.0 - model.cdf(y_max + 0.5), 0.0);
  for (std::size_t i = 0; i < regular; ++i)
    pmf[i + 1] = model.bin_mass(static_cast<double>(y_min) + static_cast<double>(i));
  CdfTable t;
  t.offset = y_min;
  t.escapes = true;
  t.cdf = quantize_pmf(pmf);
  return t;
}

}  // namespace sapm
