#include <algorithm>
#include <cmath>

#include "sapm/errors.hpp"
#include "sapm/kernels.hpp"

namespace sapm::kernels::reference {

namespace {

// Input value at a possibly padded location; padding reads as zero.
double input_at(const ConvGeometry& g, std::span<const double> x, std::size_t n, std::size_t c,
                long iy, long ix) {
  if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) return 0.0;
  return x[((n * g.cin + c) * g.h + iy) * g.w + ix];
}

long tap(std::size_t o, std::size_t k, const ConvGeometry& g) {
  return static_cast<long>(o * g.stride + k) - static_cast<long>(g.pad);
}

std::size_t widx(const ConvGeometry& g, std::size_t co, std::size_t ci, std::size_t ky,
                 std::size_t kx) {
  return ((co * g.cin + ci) * g.k + ky) * g.k + kx;
}

std::size_t yidx(const ConvGeometry& g, std::size_t n, std::size_t co, std::size_t oy,
                 std::size_t ox) {
  return ((n * g.cout + co) * g.hout() + oy) * g.wout() + ox;
}

bool inside(const ConvGeometry& g, long iy, long ix) {
  return iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
}

}  // namespace

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<double> y) {
  g.validate();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.hout(); ++oy)
        for (std::size_t ox = 0; ox < g.wout(); ++ox) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx)
                s += w[widx(g, co, ci, ky, kx)] * input_at(g, x, n, ci, tap(oy, ky, g), tap(ox, kx, g));
          y[yidx(g, n, co, oy, ox)] = s;
        }
}

void conv_backward_input(const ConvGeometry& g, std::span<const double> gy,
                         std::span<const double> w, std::span<double> gx) {
  g.validate();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.hout(); ++oy)
        for (std::size_t ox = 0; ox < g.wout(); ++ox) {
          const double gv = gy[yidx(g, n, co, oy, ox)];
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const long iy = tap(oy, ky, g), ix = tap(ox, kx, g);
                if (!inside(g, iy, ix)) continue;
                gx[((n * g.cin + ci) * g.h + iy) * g.w + ix] += gv * w[widx(g, co, ci, ky, kx)];
              }
        }
}

void conv_backward_weight(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> gy, std::span<double> gw) {
  g.validate();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.hout(); ++oy)
        for (std::size_t ox = 0; ox < g.wout(); ++ox) {
          const double gv = gy[yidx(g, n, co, oy, ox)];
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx)
                gw[widx(g, co, ci, ky, kx)] +=
                    gv * input_at(g, x, n, ci, tap(oy, ky, g), tap(ox, kx, g));
        }
}

void adder_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> f,
                   std::span<double> y) {
  g.validate();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.hout(); ++oy)
        for (std::size_t ox = 0; ox < g.wout(); ++ox) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx)
                s += std::fabs(input_at(g, x, n, ci, tap(oy, ky, g), tap(ox, kx, g)) -
                               f[widx(g, co, ci, ky, kx)]);
          y[yidx(g, n, co, oy, ox)] = -s;
        }
}

void adder_backward_input(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> f, std::span<const double> gy,
                          std::span<double> gx) {
  g.validate();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.hout(); ++oy)
        for (std::size_t ox = 0; ox < g.wout(); ++ox) {
          const double gv = gy[yidx(g, n, co, oy, ox)];
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const long iy = tap(oy, ky, g), ix = tap(ox, kx, g);
                if (!inside(g, iy, ix)) continue;
                const std::size_t xi = ((n * g.cin + ci) * g.h + iy) * g.w + ix;
                gx[xi] += gv * std::clamp(f[widx(g, co, ci, ky, kx)] - x[xi], -1.0, 1.0);
              }
        }
}

void adder_backward_filter(const ConvGeometry& g, std::span<const double> x,
                           std::span<const double> f, std::span<const double> gy,
                           std::span<double> gf) {
  g.validate();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.hout(); ++oy)
        for (std::size_t ox = 0; ox < g.wout(); ++ox) {
          const double gv = gy[yidx(g, n, co, oy, ox)];
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky)
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::size_t fi = widx(g, co, ci, ky, kx);
                gf[fi] += gv * (input_at(g, x, n, ci, tap(oy, ky, g), tap(ox, kx, g)) - f[fi]);
              }
        }
}

}  // namespace sapm::kernels::reference
