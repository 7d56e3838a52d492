#pragma once

// Randomized instances of every smooth differentiable operator, and explicit
// loop oracles for the adder and shift surrogate gradients.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"
#include "sapm/entropy.hpp"
#include "sapm/implicit_deconv.hpp"
#include "sapm/ops.hpp"

namespace sapm::testing {

struct GradInstance {
  GradFn fn;
  std::vector<Tensor> inputs;
};

struct GradCase {
  std::string name;
  std::function<GradInstance(Rng&)> make;
};

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Values bounded away from zero, either sign.
inline Tensor away_from_zero(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return t;
}

inline std::vector<GradCase> smooth_operator_cases() {
  std::vector<GradCase> cases;
  auto shape4 = [](Rng& rng) { return Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)}; };

  const std::pair<const char*, BinaryOp> binary[] = {
      {"add", BinaryOp::kAdd}, {"sub", BinaryOp::kSub}, {"mul", BinaryOp::kMul}, {"div", BinaryOp::kDiv}};
  for (const auto& [name, op] : binary) {
    cases.push_back({name, [shape4, op = op](Rng& rng) {
                       const Shape s = shape4(rng);
                       // Same shape, per-channel and scalar right operands in turn.
                       const std::size_t form = rng.below(3);
                       const Shape sb = form == 0 ? s : form == 1 ? Shape{s.c()} : Shape{};
                       Tensor b = op == BinaryOp::kDiv ? away_from_zero(sb, rng, 0.5, 2.0) : random_tensor(sb, rng);
                       return GradInstance{[op](const std::vector<Tensor>& in) { return elementwise(op, in[0], in[1]); },
                                           {random_tensor(s, rng), b}};
                     }});
  }
  const std::pair<const char*, UnaryOp> unary[] = {{"neg", UnaryOp::kNeg},   {"abs", UnaryOp::kAbs},
                                                   {"exp", UnaryOp::kExp},   {"log", UnaryOp::kLog},
                                                   {"sqrt", UnaryOp::kSqrt}, {"square", UnaryOp::kSquare}};
  for (const auto& [name, op] : unary) {
    cases.push_back({name, [shape4, op = op](Rng& rng) {
                       const Shape s = shape4(rng);
                       Tensor x = op == UnaryOp::kLog || op == UnaryOp::kSqrt ? random_tensor(s, rng, 0.2, 2.0)
                                  : op == UnaryOp::kAbs                       ? away_from_zero(s, rng, 0.1, 1.0)
                                                                              : random_tensor(s, rng);
                       return GradInstance{[op](const std::vector<Tensor>& in) { return elementwise(op, in[0]); }, {x}};
                     }});
  }
  cases.push_back({"add_scalar", [shape4](Rng& rng) {
                     const double c = rng.uniform(-2, 2);
                     return GradInstance{[c](const std::vector<Tensor>& in) { return add(in[0], c); },
                                         {random_tensor(shape4(rng), rng)}};
                   }});
  cases.push_back({"mul_scalar", [shape4](Rng& rng) {
                     const double c = rng.uniform(-2, 2);
                     return GradInstance{[c](const std::vector<Tensor>& in) { return mul(in[0], c); },
                                         {random_tensor(shape4(rng), rng)}};
                   }});
  cases.push_back({"sum", [shape4](Rng& rng) {
                     return GradInstance{[](const std::vector<Tensor>& in) { return sum(in[0]); },
                                         {random_tensor(shape4(rng), rng)}};
                   }});
  cases.push_back({"mean", [shape4](Rng& rng) {
                     return GradInstance{[](const std::vector<Tensor>& in) { return mean(in[0]); },
                                         {random_tensor(shape4(rng), rng)}};
                   }});
  cases.push_back({"mse", [shape4](Rng& rng) {
                     const Shape s = shape4(rng);
                     return GradInstance{[](const std::vector<Tensor>& in) { return mse(in[0], in[1]); },
                                         {random_tensor(s, rng), random_tensor(s, rng)}};
                   }});
  cases.push_back({"reshape", [](Rng& rng) {
                     const std::size_t c = pick(rng, 1, 4), h = pick(rng, 1, 4);
                     return GradInstance{
                         [c, h](const std::vector<Tensor>& in) { return reshape(in[0], Shape{1, c * h, 1, 1}); },
                         {random_tensor(Shape{1, c, h, 1}, rng)}};
                   }});
  cases.push_back({"conv2d", [](Rng& rng) {
                     const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = rng.below(k);
                     const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                     const std::size_t h = pick(rng, k, k + 3), w = pick(rng, k, k + 3);
                     return GradInstance{[stride, pad](const std::vector<Tensor>& in) {
                                           return conv2d(in[0], in[1], in[2], stride, pad);
                                         },
                                         {random_tensor(Shape{pick(rng, 1, 2), cin, h, w}, rng),
                                          random_tensor(Shape{cout, cin, k, k}, rng), random_tensor(Shape{cout}, rng)}};
                   }});
  cases.push_back({"transposed_conv2d", [](Rng& rng) {
                     const std::size_t k = pick(rng, 2, 4), stride = pick(rng, 1, 2), pad = rng.below(k / 2 + 1);
                     const std::size_t opad = stride > 1 ? rng.below(stride) : 0;
                     const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                     return GradInstance{[stride, pad, opad](const std::vector<Tensor>& in) {
                                           return transposed_conv2d(in[0], in[1], in[2], stride, pad, opad);
                                         },
                                         {random_tensor(Shape{pick(rng, 1, 2), cin, pick(rng, 2, 4), pick(rng, 2, 4)}, rng),
                                          random_tensor(Shape{cin, cout, k, k}, rng), random_tensor(Shape{cout}, rng)}};
                   }});
  cases.push_back({"avg_pool2d", [](Rng& rng) {
                     const std::size_t k = pick(rng, 1, 3);
                     return GradInstance{[k](const std::vector<Tensor>& in) { return avg_pool2d(in[0], k, k); },
                                         {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 3), k * pick(rng, 1, 3), k * pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"pixel_shuffle", [](Rng& rng) {
                     const std::size_t r = pick(rng, 1, 3);
                     return GradInstance{[r](const std::vector<Tensor>& in) { return pixel_shuffle(in[0], r); },
                                         {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 2) * r * r, pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"pixel_unshuffle", [](Rng& rng) {
                     const std::size_t r = pick(rng, 1, 3);
                     return GradInstance{[r](const std::vector<Tensor>& in) { return pixel_unshuffle(in[0], r); },
                                         {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 2), r * pick(rng, 1, 3), r * pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"channel_adapt", [](Rng& rng) {
                     const std::size_t cout = pick(rng, 1, 7);
                     return GradInstance{[cout](const std::vector<Tensor>& in) { return channel_adapt(in[0], cout); },
                                         {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"leaky_relu", [shape4](Rng& rng) {
                     const double slope = rng.uniform(0.0, 0.3);
                     return GradInstance{[slope](const std::vector<Tensor>& in) { return leaky_relu(in[0], slope); },
                                         {away_from_zero(shape4(rng), rng, 0.05, 1.0)}};
                   }});
  cases.push_back({"softplus", [shape4](Rng& rng) {
                     return GradInstance{[](const std::vector<Tensor>& in) { return softplus(in[0]); },
                                         {random_tensor(shape4(rng), rng, -4, 4)}};
                   }});
  for (bool inverse : {false, true}) {
    cases.push_back({inverse ? "igdn" : "gdn", [inverse](Rng& rng) {
                       const std::size_t c = pick(rng, 1, 4);
                       return GradInstance{[inverse](const std::vector<Tensor>& in) { return gdn(in[0], in[1], in[2], inverse); },
                                           {random_tensor(Shape{pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 1, 3)}, rng, -2, 2),
                                            random_tensor(Shape{c}, rng, 0.5, 1.5), random_tensor(Shape{c, c}, rng, 0.05, 0.5)}};
                     }});
  }
  cases.push_back({"nonneg_reparam", [](Rng& rng) {
                     // Storage values above the bound sqrt(1e-6 + 2^-36).
                     return GradInstance{[](const std::vector<Tensor>& in) { return nonneg_reparam(in[0], 1e-6); },
                                         {random_tensor(Shape{pick(rng, 1, 6)}, rng, 0.05, 2.0)}};
                   }});
  cases.push_back({"implicit_deconv_1x1", [](Rng& rng) {
                     const std::size_t c = pick(rng, 1, 4), cout = pick(rng, 1, 4);
                     auto params = std::make_shared<IDParams>(IDParams::identity_init(c));
                     const Tensor x = random_tensor(Shape{2, c, pick(rng, 2, 4), pick(rng, 2, 4)}, rng);
                     return GradInstance{[params](const std::vector<Tensor>& in) {
                                           IDParams p = *params;
                                           p.weight = in[1];
                                           return implicit_deconv_1x1(in[0], p, IdMode::kTrain, false);
                                         },
                                         {x, random_tensor(Shape{cout, c}, rng)}};
                   }});
  cases.push_back({"lmm_likelihood", [](Rng& rng) {
                     const std::size_t k = pick(rng, 1, 3), m = pick(rng, 1, 3), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
                     Tensor y(Shape{1, m, h, w});
                     for (double& v : y.data()) v = static_cast<double>(static_cast<int>(rng.below(7)) - 3) + rng.uniform(-0.3, 0.3);
                     return GradInstance{[k](const std::vector<Tensor>& in) {
                                           return lmm_likelihood(in[0], LmmParams{in[1], k});
                                         },
                                         {y, random_tensor(Shape{1, 3 * k * m, h, w}, rng, -1.5, 1.5)}};
                   }});
  cases.push_back({"factorized_likelihood", [](Rng& rng) {
                     const std::size_t c = pick(rng, 1, 4);
                     return GradInstance{[](const std::vector<Tensor>& in) {
                                           return factorized_likelihood(in[0], FactorizedParams{in[1], in[2]});
                                         },
                                         {random_tensor(Shape{1, c, pick(rng, 1, 3), pick(rng, 1, 3)}, rng, -3, 3),
                                          random_tensor(Shape{c}, rng), random_tensor(Shape{c}, rng, -1, 1)}};
                   }});
  cases.push_back({"rate_bits", [shape4](Rng& rng) {
                     return GradInstance{[](const std::vector<Tensor>& in) { return rate_bits(in[0]); },
                                         {random_tensor(shape4(rng), rng, 0.05, 1.0)}};
                   }});
  return cases;
}

// ---------------------------------------------------------------------------
// Explicit-loop oracles.

struct AdderOracle {
  std::vector<double> y, gx, gf;
};

// Zero-padded input; padded taps take x = 0.
inline AdderOracle adder_oracle(const Tensor& x, const Tensor& f, const Tensor& gy, std::size_t stride,
                                std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& fs = f.shape();
  const std::size_t n = xs.n(), cin = xs.c(), h = xs.h(), w = xs.w(), cout = fs[0], k = fs[2];
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  AdderOracle o;
  o.y.assign(n * cout * ho * wo, 0.0);
  o.gx.assign(x.numel(), 0.0);
  o.gf.assign(f.numel(), 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::size_t oi = ((b * cout + co) * ho + oy) * wo + ox;
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
                const std::size_t xi = inside ? ((b * cin + ci) * h + iy) * w + ix : 0;
                const double xv = inside ? x[xi] : 0.0;
                const std::size_t fi = ((co * cin + ci) * k + ky) * k + kx;
                const double fv = f[fi];
                acc += std::fabs(xv - fv);
                o.gf[fi] += gy[oi] * (xv - fv);
                if (inside) o.gx[xi] += gy[oi] * std::clamp(fv - xv, -1.0, 1.0);
              }
          o.y[oi] = -acc;
        }
  return o;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    worst = std::max(worst, std::fabs(a[i] - b[i]) / std::max(1.0, std::fabs(b[i])));
  return worst;
}

}  // namespace sapm::testing
