#include "sapm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sapm/aligned.hpp"
#include "sapm/errors.hpp"

namespace sapm::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_sizes(const ConvGeometry& g, std::size_t x, std::size_t w, std::size_t y) {
  g.validate();
  if (x != g.in_size() || w != g.weight_size() || y != g.out_size())
    throw ShapeError("kernel buffer sizes do not match geometry");
}

// Sums per-image partials into `out` in batch order.
void reduce_partials(const Buffer& partials, std::size_t batch,
                     std::span<double> out) {
  const std::size_t n = out.size();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* p = partials.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) out[i] += p[i];
  }
}

// Branch-free clip to [-1, 1] (the ternaries vectorize, std::clamp does not).
inline double clip_unit(double d) {
  d = d < -1.0 ? -1.0 : d;
  return d > 1.0 ? 1.0 : d;
}

}  // namespace

void ConvGeometry::validate() const {
  if (stride == 0 || k == 0) throw ShapeError("stride and kernel size must be positive");
  if (h + 2 * pad < k || w + 2 * pad < k)
    throw ShapeError("kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(h) + "x" + std::to_string(w));
}

void im2col(const ConvGeometry& g, const double* image, double* col) {
  const std::size_t ho = g.hout(), wo = g.wout(), plane = ho * wo;
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const double* src = image + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = col + ((ci * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          double* row = dst + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(row, row + wo, 0.0);
            continue;
          }
          const double* srow = src + iy * g.w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* image) {
  const std::size_t ho = g.hout(), wo = g.wout(), plane = ho * wo;
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    double* dst = image + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((ci * g.k + ky) * g.k + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* drow = dst + iy * g.w;
          const double* row = src + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.w)) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Convolution

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<double> y) {
  check_sizes(g, x.size(), w.size(), y.size());
  const long batch = static_cast<long>(g.batch);
  const std::size_t plane = g.hout() * g.wout(), patch = g.patch();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * plane;
  CMapMat wm(w.data(), g.cout, patch);
#pragma omp parallel
  {
    Buffer col(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < batch; ++b) {
      im2col(g, x.data() + b * in_img, col.data());
      MapMat ym(y.data() + b * out_img, g.cout, plane);
      ym.noalias() = wm * CMapMat(col.data(), patch, plane);
    }
  }
}

void conv_backward_input(const ConvGeometry& g, std::span<const double> gy,
                         std::span<const double> w, std::span<double> gx) {
  check_sizes(g, gx.size(), w.size(), gy.size());
  const long batch = static_cast<long>(g.batch);
  const std::size_t plane = g.hout() * g.wout(), patch = g.patch();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * plane;
  CMapMat wm(w.data(), g.cout, patch);
#pragma omp parallel
  {
    Buffer col(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < batch; ++b) {
      MapMat cm(col.data(), patch, plane);
      cm.noalias() = wm.transpose() * CMapMat(gy.data() + b * out_img, g.cout, plane);
      col2im(g, col.data(), gx.data() + b * in_img);
    }
  }
}

void conv_backward_weight(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> gy, std::span<double> gw) {
  check_sizes(g, x.size(), gw.size(), gy.size());
  const long batch = static_cast<long>(g.batch);
  const std::size_t plane = g.hout() * g.wout(), patch = g.patch();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * plane;
  const std::size_t wsize = g.weight_size();
  Buffer partials(g.batch * wsize);
#pragma omp parallel
  {
    Buffer col(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < batch; ++b) {
      im2col(g, x.data() + b * in_img, col.data());
      MapMat pm(partials.data() + b * wsize, g.cout, patch);
      pm.noalias() = CMapMat(gy.data() + b * out_img, g.cout, plane) *
                     CMapMat(col.data(), patch, plane).transpose();
    }
  }
  reduce_partials(partials, g.batch, gw);
}

// ---------------------------------------------------------------------------
// Adder

void adder_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> f,
                   std::span<double> y) {
  check_sizes(g, x.size(), f.size(), y.size());
  const long batch = static_cast<long>(g.batch);
  const std::size_t plane = g.hout() * g.wout(), patch = g.patch();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * plane;
  // Tiles of 4 output channels x 8 positions, accumulated over the whole
  // patch before a single store.
  constexpr std::size_t kCo = 4;
  constexpr int kP = 8;
  using Tile = Eigen::Array<double, kP, 1>;
#pragma omp parallel
  {
    Buffer col(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < batch; ++b) {
      im2col(g, x.data() + b * in_img, col.data());
      double* yb = y.data() + b * out_img;
      std::size_t co0 = 0;
      for (; co0 + kCo <= g.cout; co0 += kCo) {
        const double* f0 = f.data() + co0 * patch;
        std::size_t p0 = 0;
        for (; p0 + kP <= plane; p0 += kP) {
          Tile a0 = Tile::Zero(), a1 = Tile::Zero(), a2 = Tile::Zero(), a3 = Tile::Zero();
          for (std::size_t kk = 0; kk < patch; ++kk) {
            const Tile xv = Eigen::Map<const Tile>(col.data() + kk * plane + p0);
            a0 += (xv - f0[kk]).abs();
            a1 += (xv - f0[patch + kk]).abs();
            a2 += (xv - f0[2 * patch + kk]).abs();
            a3 += (xv - f0[3 * patch + kk]).abs();
          }
          Eigen::Map<Tile>(yb + co0 * plane + p0) = -a0;
          Eigen::Map<Tile>(yb + (co0 + 1) * plane + p0) = -a1;
          Eigen::Map<Tile>(yb + (co0 + 2) * plane + p0) = -a2;
          Eigen::Map<Tile>(yb + (co0 + 3) * plane + p0) = -a3;
        }
        for (; p0 < plane; ++p0)
          for (std::size_t j = 0; j < kCo; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < patch; ++kk)
              acc += std::fabs(col[kk * plane + p0] - f0[j * patch + kk]);
            yb[(co0 + j) * plane + p0] = -acc;
          }
      }
      for (; co0 < g.cout; ++co0)
        for (std::size_t p = 0; p < plane; ++p) {
          double acc = 0.0;
          for (std::size_t kk = 0; kk < patch; ++kk)
            acc += std::fabs(col[kk * plane + p] - f[co0 * patch + kk]);
          yb[co0 * plane + p] = -acc;
        }
    }
  }
}

void adder_backward_input(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> f, std::span<const double> gy,
                          std::span<double> gx) {
  check_sizes(g, x.size(), f.size(), gy.size());
  if (gx.size() != x.size()) throw ShapeError("adder input gradient size");
  const long batch = static_cast<long>(g.batch);
  const std::size_t plane = g.hout() * g.wout(), patch = g.patch();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * plane;
#pragma omp parallel
  {
    Buffer col(patch * plane);
    Buffer gcol(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < batch; ++b) {
      im2col(g, x.data() + b * in_img, col.data());
      const double* gyb = gy.data() + b * out_img;
      constexpr int kP = 16;
      using Tile = Eigen::Array<double, kP, 1>;
      for (std::size_t kk = 0; kk < patch; ++kk) {
        const double* row = col.data() + kk * plane;
        double* grow = gcol.data() + kk * plane;
        std::size_t p0 = 0;
        for (; p0 + kP <= plane; p0 += kP) {
          const Tile xv = Eigen::Map<const Tile>(row + p0);
          Tile acc = Tile::Zero();
          for (std::size_t co = 0; co < g.cout; ++co) {
            const double fv = f[co * patch + kk];
            acc += Eigen::Map<const Tile>(gyb + co * plane + p0) * (fv - xv).max(-1.0).min(1.0);
          }
          Eigen::Map<Tile>(grow + p0) = acc;
        }
        for (; p0 < plane; ++p0) {
          double acc = 0.0;
          for (std::size_t co = 0; co < g.cout; ++co)
            acc += gyb[co * plane + p0] * clip_unit(f[co * patch + kk] - row[p0]);
          grow[p0] = acc;
        }
      }
      col2im(g, gcol.data(), gx.data() + b * in_img);
    }
  }
}

void adder_backward_filter(const ConvGeometry& g, std::span<const double> x,
                           std::span<const double> f, std::span<const double> gy,
                           std::span<double> gf) {
  check_sizes(g, x.size(), f.size(), gy.size());
  if (gf.size() != f.size()) throw ShapeError("adder filter gradient size");
  const long batch = static_cast<long>(g.batch);
  const std::size_t plane = g.hout() * g.wout(), patch = g.patch();
  const std::size_t in_img = g.cin * g.h * g.w, out_img = g.cout * plane;
  const std::size_t fsize = g.weight_size();
  Buffer partials(g.batch * fsize);
  CMapMat fm(f.data(), g.cout, patch);
#pragma omp parallel
  {
    Buffer col(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < batch; ++b) {
      im2col(g, x.data() + b * in_img, col.data());
      CMapMat gym(gy.data() + b * out_img, g.cout, plane);
      MapMat pm(partials.data() + b * fsize, g.cout, patch);
      // sum_p gy (x - f) = gy . col^T - f * sum_p gy
      pm.noalias() = gym * CMapMat(col.data(), patch, plane).transpose();
      const Eigen::VectorXd gsum = gym.rowwise().sum();
      pm.noalias() -= gsum.asDiagonal() * fm;
    }
  }
  reduce_partials(partials, g.batch, gf);
}

}  // namespace sapm::kernels
