#include "sapm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sapm/errors.hpp"
#include "sapm/kernels.hpp"

namespace sapm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_rank4(const Tensor& x, const char* op) {
  if (!x.defined() || x.shape().rank() != 4)
    throw ShapeError(std::string(op) + " expects an NCHW tensor");
}

kernels::ConvGeometry geometry(const Tensor& x, const Tensor& w, std::size_t stride,
                               std::size_t pad, const char* op) {
  require_rank4(x, op);
  const Shape& ws = w.shape();
  if (ws.rank() != 4 || ws[2] != ws[3])
    throw ShapeError(std::string(op) + " expects a square (Cout, Cin, k, k) kernel");
  if (ws[1] != x.shape().c())
    throw ShapeError(std::string(op) + ": kernel wants " + std::to_string(ws[1]) +
                     " input channels, got " + std::to_string(x.shape().c()));
  kernels::ConvGeometry g{x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w(),
                          ws[0],         ws[2],         stride,        pad};
  g.validate();
  return g;
}

void add_bias(Tensor& y, const Tensor& bias) {
  const std::size_t c = y.shape().c(), plane = y.shape().h() * y.shape().w();
  if (bias.numel() != c) throw ShapeError("bias length does not match channel count");
  auto d = y.data();
  auto b = bias.data();
  for (std::size_t n = 0; n < y.shape().n(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = d.data() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += b[ch];
    }
}

void accumulate_bias_grad(const Tensor& bias, std::span<const double> g, const Shape& ys) {
  auto gb = bias.ensure_grad();
  const std::size_t c = ys.c(), plane = ys.h() * ys.w();
  for (std::size_t n = 0; n < ys.n(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = g.data() + (n * c + ch) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      gb[ch] += s;
    }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  const auto g = geometry(x, w, stride, pad, "conv2d");
  Tensor y(Shape{g.batch, g.cout, g.hout(), g.wout()});
  kernels::conv_forward(g, x.data(), w.data(), y.data());
  if (bias.defined()) add_bias(y, bias);
  if (track(y, {&x, &w, &bias})) {
    record(y, [x, w, bias, y, g](std::span<const double> gy) mutable {
      if (x.requires_grad()) kernels::conv_backward_input(g, gy, w.data(), x.ensure_grad());
      if (w.requires_grad()) kernels::conv_backward_weight(g, x.data(), gy, w.ensure_grad());
      if (bias.defined() && bias.requires_grad()) accumulate_bias_grad(bias, gy, y.shape());
    });
  }
  return y;
}

Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                         std::size_t pad, std::size_t output_pad) {
  require_rank4(x, "transposed_conv2d");
  const Shape& ws = w.shape();
  if (ws.rank() != 4 || ws[2] != ws[3] || ws[0] != x.shape().c())
    throw ShapeError("transposed_conv2d expects a (Cin, Cout, k, k) kernel matching the input");
  if (output_pad >= stride)
    throw ShapeError("transposed_conv2d output_pad must be smaller than stride");
  const std::size_t k = ws[2];
  const long ho = (static_cast<long>(x.shape().h()) - 1) * static_cast<long>(stride) -
                  2 * static_cast<long>(pad) + static_cast<long>(k + output_pad);
  const long wo = (static_cast<long>(x.shape().w()) - 1) * static_cast<long>(stride) -
                  2 * static_cast<long>(pad) + static_cast<long>(k + output_pad);
  if (ho <= 0 || wo <= 0) throw ShapeError("transposed_conv2d output would be empty");
  // The conv2d this layer is the adjoint of: (Cout, ho, wo) -> (Cin, H, W).
  kernels::ConvGeometry g{x.shape().n(), ws[1], static_cast<std::size_t>(ho),
                          static_cast<std::size_t>(wo), ws[0], k, stride, pad};
  g.validate();
  if (g.hout() != x.shape().h() || g.wout() != x.shape().w())
    throw ShapeError("transposed_conv2d geometry is not invertible");
  Tensor y(Shape{g.batch, g.cin, g.h, g.w});
  kernels::conv_backward_input(g, x.data(), w.data(), y.data());
  if (bias.defined()) add_bias(y, bias);
  if (track(y, {&x, &w, &bias})) {
    record(y, [x, w, bias, y, g](std::span<const double> gy) mutable {
      if (x.requires_grad()) {
        Buffer tmp(x.numel());
        kernels::conv_forward(g, gy, w.data(), tmp);
        auto gx = x.ensure_grad();
        for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
      }
      if (w.requires_grad()) kernels::conv_backward_weight(g, gy, x.data(), w.ensure_grad());
      if (bias.defined() && bias.requires_grad()) accumulate_bias_grad(bias, gy, y.shape());
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

double shift_quantize_value(double w, ShiftRange range, int* exponent) {
  const double a = std::fabs(w);
  int p = range.p_min;
  if (a > 0.0) {
    const double lg = std::round(std::log2(a));
    p = static_cast<int>(std::clamp(lg, static_cast<double>(range.p_min),
                                    static_cast<double>(range.p_max)));
  }
  if (exponent) *exponent = p;
  const double s = std::signbit(w) && w != 0.0 ? -1.0 : 1.0;
  return s * std::ldexp(1.0, p);
}

ShiftQuantized shift_quantize(const Tensor& w, ShiftRange range) {
  if (range.p_min >= range.p_max) throw std::invalid_argument("shift range needs p_min < p_max");
  ShiftQuantized q{Tensor(w.shape()), Tensor(w.shape()), Tensor(w.shape())};
  auto src = w.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    int p = 0;
    const double v = shift_quantize_value(src[i], range, &p);
    q.sign[i] = v < 0.0 ? -1.0 : 1.0;
    q.exponent[i] = p;
    q.weight[i] = v;
  }
  return q;
}

Tensor shift_quantize_ste(const Tensor& w, ShiftRange range) {
  if (range.p_min >= range.p_max) throw std::invalid_argument("shift range needs p_min < p_max");
  Tensor q(w.shape());
  auto src = w.data();
  auto dst = q.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = shift_quantize_value(src[i], range);
  if (track(q, {&w})) {
    record(q, [w](std::span<const double> g) mutable {
      auto gw = w.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gw[i] += g[i];
    });
  }
  return q;
}

Tensor shift_conv2d(const Tensor& x, const ShiftWeights& sw, std::size_t stride, std::size_t pad) {
  return conv2d(x, shift_quantize_ste(sw.weight, sw.range), sw.bias, stride, pad);
}

// ---------------------------------------------------------------------------

Tensor adder_conv2d(const Tensor& x, const AdderFilters& af, std::size_t stride, std::size_t pad) {
  const auto g = geometry(x, af.filters, stride, pad, "adder_conv2d");
  Tensor y(Shape{g.batch, g.cout, g.hout(), g.wout()});
  kernels::adder_forward(g, x.data(), af.filters.data(), y.data());
  if (af.bias.defined()) add_bias(y, af.bias);
  Tensor f = af.filters;
  Tensor bias = af.bias;
  if (track(y, {&x, &f, &bias})) {
    record(y, [x, f, bias, y, g](std::span<const double> gy) mutable {
      if (x.requires_grad())
        kernels::adder_backward_input(g, x.data(), f.data(), gy, x.ensure_grad());
      if (f.requires_grad())
        kernels::adder_backward_filter(g, x.data(), f.data(), gy, f.ensure_grad());
      if (bias.defined() && bias.requires_grad()) accumulate_bias_grad(bias, gy, y.shape());
    });
  }
  return y;
}

void adaptive_gradient_scale(std::span<double> grad, double eta) {
  double s = 0.0;
  for (double v : grad) s += v * v;
  const double norm = std::sqrt(s);
  if (norm == 0.0) return;
  const double scale = eta * std::sqrt(static_cast<double>(grad.size())) / norm;
  for (double& v : grad) v *= scale;
}

// ---------------------------------------------------------------------------

Tensor avg_pool2d(const Tensor& x, std::size_t k, std::size_t stride) {
  require_rank4(x, "avg_pool2d");
  if (k == 0 || stride == 0) throw ShapeError("avg_pool2d needs positive window and stride");
  const Shape& s = x.shape();
  if (s.h() < k || s.w() < k) throw ShapeError("avg_pool2d window larger than input");
  const std::size_t ho = (s.h() - k) / stride + 1, wo = (s.w() - k) / stride + 1;
  const std::size_t planes = s.n() * s.c();
  Tensor y(Shape{s.n(), s.c(), ho, wo});
  const double inv = 1.0 / static_cast<double>(k * k);
  auto xd = x.data();
  auto yd = y.data();
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < static_cast<long>(planes); ++pl) {
    const double* src = xd.data() + pl * s.h() * s.w();
    double* dst = yd.data() + pl * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            acc += src[(oy * stride + ky) * s.w() + ox * stride + kx];
        dst[oy * wo + ox] = acc * inv;
      }
  }
  if (track(y, {&x})) {
    record(y, [x, k, stride, ho, wo, inv](std::span<const double> g) mutable {
      const Shape& s = x.shape();
      auto gx = x.ensure_grad();
      const std::size_t planes = s.n() * s.c();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        double* dst = gx.data() + pl * s.h() * s.w();
        const double* src = g.data() + pl * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const double v = src[oy * wo + ox] * inv;
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                dst[(oy * stride + ky) * s.w() + ox * stride + kx] += v;
          }
      }
    });
  }
  return y;
}

namespace {

// Index of the input element feeding output element i of a pixel shuffle.
struct ShuffleMap {
  std::size_t n, c, h, w, r;  // output channels c, input spatial h x w
  std::size_t source(std::size_t nn, std::size_t cc, std::size_t oy, std::size_t ox) const {
    const std::size_t a = oy % r, b = ox % r;
    const std::size_t ic = cc * r * r + a * r + b;
    return ((nn * c * r * r + ic) * h + oy / r) * w + ox / r;
  }
};

// out[i] = in[map[i]] as an autodiff op.
Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::size_t> map) {
  Tensor y(out_shape);
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < map.size(); ++i) yd[i] = xd[map[i]];
  if (track(y, {&x})) {
    record(y, [x, map = std::move(map)](std::span<const double> g) mutable {
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += g[i];
    });
  }
  return y;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  require_rank4(x, "pixel_shuffle");
  const Shape& s = x.shape();
  if (r == 0 || s.c() % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channels " + std::to_string(s.c()) + " not divisible by r^2");
  const std::size_t c = s.c() / (r * r);
  const Shape out{s.n(), c, s.h() * r, s.w() * r};
  ShuffleMap m{s.n(), c, s.h(), s.w(), r};
  std::vector<std::size_t> map(out.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < out.n(); ++n)
    for (std::size_t cc = 0; cc < c; ++cc)
      for (std::size_t oy = 0; oy < out.h(); ++oy)
        for (std::size_t ox = 0; ox < out.w(); ++ox) map[i++] = m.source(n, cc, oy, ox);
  return gather(x, out, std::move(map));
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  require_rank4(x, "pixel_unshuffle");
  const Shape& s = x.shape();
  if (r == 0 || s.h() % r != 0 || s.w() % r != 0)
    throw ShapeError("pixel_unshuffle: spatial extent not divisible by r");
  const Shape out{s.n(), s.c() * r * r, s.h() / r, s.w() / r};
  std::vector<std::size_t> map(out.numel());
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t oy = 0; oy < s.h(); ++oy)
        for (std::size_t ox = 0; ox < s.w(); ++ox) {
          const std::size_t ic = c * r * r + (oy % r) * r + ox % r;
          const std::size_t dst = ((n * out.c() + ic) * out.h() + oy / r) * out.w() + ox / r;
          map[dst] = ((n * s.c() + c) * s.h() + oy) * s.w() + ox;
        }
  return gather(x, out, std::move(map));
}

Tensor channel_adapt(const Tensor& x, std::size_t cout) {
  require_rank4(x, "channel_adapt");
  const Shape& s = x.shape();
  if (cout == 0) throw ShapeError("channel_adapt to zero channels");
  if (cout == s.c()) return x;
  const std::size_t plane = s.h() * s.w();
  const Shape out{s.n(), cout, s.h(), s.w()};
  std::vector<std::size_t> map(out.numel());
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < cout; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        map[(n * cout + c) * plane + p] = (n * s.c() + c % s.c()) * plane + p;
  return gather(x, out, std::move(map));
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] >= 0.0 ? xd[i] : slope * xd[i];
  if (track(y, {&x})) {
    record(y, [x, slope](std::span<const double> g) mutable {
      auto xd = x.data();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xd[i] >= 0.0 ? g[i] : slope * g[i];
    });
  }
  return y;
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

double inverse_softplus_value(double y) {
  if (!(y > 0.0)) throw DomainError("inverse softplus needs a positive value");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

Tensor softplus(const Tensor& x) {
  Tensor y(x.shape());
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = softplus_value(xd[i]);
  if (track(y, {&x})) {
    record(y, [x](std::span<const double> g) mutable {
      auto xd = x.data();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (1.0 + std::exp(-xd[i]));
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

Tensor gdn(const Tensor& x, const Tensor& beta, const Tensor& gamma, bool inverse) {
  require_rank4(x, "gdn");
  const Shape& s = x.shape();
  const std::size_t c = s.c(), plane = s.h() * s.w(), batch = s.n();
  if (beta.numel() != c || gamma.numel() != c * c)
    throw ShapeError("gdn parameters do not match " + std::to_string(c) + " channels");
  const double a = inverse ? 0.5 : -0.5;
  Tensor y(s);
  // Denominator argument per element, kept for the backward pass.
  auto norm = std::make_shared<Buffer>(x.numel());
  CMapMat gm(gamma.data().data(), c, c);
  Eigen::Map<const Eigen::VectorXd> bv(beta.data().data(), c);
#pragma omp parallel for schedule(static)
  for (long n = 0; n < static_cast<long>(batch); ++n) {
    CMapMat xm(x.data().data() + n * c * plane, c, plane);
    MapMat sm(norm->data() + n * c * plane, c, plane);
    sm.noalias() = gm * xm.array().square().matrix();
    sm.colwise() += bv;
    MapMat ym(y.data().data() + n * c * plane, c, plane);
    ym = xm.array() * sm.array().pow(a);
  }
  if (track(y, {&x, &beta, &gamma})) {
    record(y, [x, beta, gamma, norm, a, c, plane, batch](std::span<const double> g) mutable {
      CMapMat gm(gamma.data().data(), c, c);
      Buffer gbeta(batch * c, 0.0), ggamma(batch * c * c, 0.0);
      Buffer gx(x.requires_grad() ? x.numel() : 0);
#pragma omp parallel for schedule(static)
      for (long n = 0; n < static_cast<long>(batch); ++n) {
        CMapMat xm(x.data().data() + n * c * plane, c, plane);
        CMapMat sm(norm->data() + n * c * plane, c, plane);
        CMapMat gym(g.data() + n * c * plane, c, plane);
        // t = a * g * x * s^(a-1)
        const RowMat t = (a * gym.array() * xm.array() * sm.array().pow(a - 1.0)).matrix();
        if (!gx.empty()) {
          MapMat gxm(gx.data() + n * c * plane, c, plane);
          gxm = (gym.array() * sm.array().pow(a) +
                 2.0 * xm.array() * (gm.transpose() * t).array())
                    .matrix();
        }
        Eigen::Map<Eigen::VectorXd>(gbeta.data() + n * c, c) = t.rowwise().sum();
        MapMat(ggamma.data() + n * c * c, c, c).noalias() =
            t * xm.array().square().matrix().transpose();
      }
      if (x.requires_grad()) {
        auto dst = x.ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += gx[i];
      }
      if (beta.requires_grad()) {
        auto dst = beta.ensure_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t i = 0; i < c; ++i) dst[i] += gbeta[n * c + i];
      }
      if (gamma.requires_grad()) {
        auto dst = gamma.ensure_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t i = 0; i < c * c; ++i) dst[i] += ggamma[n * c * c + i];
      }
    });
  }
  return y;
}

namespace {
constexpr double kReparamPedestal = 0x1.0p-36;  // (2^-18)^2
}

double nonneg_reparam_storage(double value) { return std::sqrt(value + kReparamPedestal); }

Tensor nonneg_reparam(const Tensor& v, double minimum) {
  const double bound = std::sqrt(minimum + kReparamPedestal);
  Tensor y(v.shape());
  auto vd = v.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < vd.size(); ++i) {
    const double b = std::max(vd[i], bound);
    yd[i] = b * b - kReparamPedestal;
  }
  if (track(y, {&v})) {
    record(y, [v, bound](std::span<const double> g) mutable {
      auto vd = v.data();
      auto gv = v.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        // Only let the gradient through below the bound if descent raises v.
        if (vd[i] >= bound || g[i] < 0.0) gv[i] += 2.0 * std::max(vd[i], bound) * g[i];
      }
    });
  }
  return y;
}

GDNParams GDNParams::identity_init(std::size_t channels, bool inverse, double gamma_init) {
  GDNParams p;
  p.inverse = inverse;
  p.beta_storage = Tensor(Shape{channels}, nonneg_reparam_storage(1.0));
  p.gamma_storage = Tensor(Shape{channels, channels}, nonneg_reparam_storage(0.0));
  for (std::size_t i = 0; i < channels; ++i)
    p.gamma_storage[i * channels + i] = nonneg_reparam_storage(gamma_init);
  p.beta_storage.set_requires_grad(true);
  p.gamma_storage.set_requires_grad(true);
  return p;
}

Tensor GDNParams::beta() const { return nonneg_reparam(beta_storage, kBetaMin); }
Tensor GDNParams::gamma() const { return nonneg_reparam(gamma_storage, 0.0); }

Tensor gdn(const Tensor& x, const GDNParams& p) { return gdn(x, p.beta(), p.gamma(), p.inverse); }

// ---------------------------------------------------------------------------

double round_half_away(double v) { return std::round(v); }

Tensor quantize_latent(const Tensor& y, QuantMode mode, Rng& rng) {
  Tensor q(y.shape());
  auto src = y.data();
  auto dst = q.data();
  if (mode == QuantMode::kNoise) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] + (rng.uniform() - 0.5);
  } else {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = round_half_away(src[i]);
  }
  if (track(q, {&y})) {
    record(q, [y](std::span<const double> g) mutable {
      auto gy = y.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
    });
  }
  return q;
}

}  // namespace sapm
