#include "sapm/implicit_deconv.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "sapm/errors.hpp"

namespace sapm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// NCHW tensor -> feature-major (C x N*H*W) matrix, and back.
RowMat to_features(std::span<const double> x, std::size_t n, std::size_t c, std::size_t plane) {
  RowMat f(c, n * plane);
  for (std::size_t b = 0; b < n; ++b)
    f.middleCols(b * plane, plane) = CMapMat(x.data() + b * c * plane, c, plane);
  return f;
}

void from_features(const RowMat& f, std::size_t n, std::size_t c, std::size_t plane,
                   std::span<double> x, bool accumulate) {
  for (std::size_t b = 0; b < n; ++b) {
    MapMat dst(x.data() + b * c * plane, c, plane);
    if (accumulate)
      dst += f.middleCols(b * plane, plane);
    else
      dst = f.middleCols(b * plane, plane);
  }
}

struct Decomposition {
  Vec mean;
  RowMat centered;
  Mat eigvec;
  Vec shifted;  // max(lambda, 0) + eps
  Mat whiten;
};

Decomposition decompose(const RowMat& features, double eps) {
  const auto count = static_cast<double>(features.cols());
  Decomposition d;
  d.mean = features.rowwise().mean();
  d.centered = features.colwise() - d.mean;
  const Mat cov = (d.centered * d.centered.transpose()) / count;
  if (!cov.allFinite()) throw NumericError("implicit_deconv: non-finite covariance");
  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success)
    throw NumericError("implicit_deconv: eigendecomposition failed");
  d.eigvec = solver.eigenvectors();
  d.shifted = solver.eigenvalues().cwiseMax(0.0).array() + eps;
  d.whiten = d.eigvec * d.shifted.cwiseSqrt().cwiseInverse().asDiagonal() * d.eigvec.transpose();
  return d;
}

}  // namespace

IDParams IDParams::identity_init(std::size_t channels, double eps) {
  return replicate_init(channels, 1, eps);
}

IDParams IDParams::replicate_init(std::size_t channels, std::size_t copies, double eps) {
  if (copies == 0) throw std::invalid_argument("implicit_deconv: zero copies");
  IDParams p;
  p.eps = eps;
  p.weight = Tensor(Shape{channels * copies, channels});
  p.running_mean = Tensor(Shape{channels});
  p.running_whiten = Tensor(Shape{channels, channels});
  for (std::size_t i = 0; i < channels; ++i) p.running_whiten[i * channels + i] = 1.0;
  for (std::size_t o = 0; o < channels * copies; ++o) p.weight[o * channels + o / copies] = 1.0;
  p.weight.set_requires_grad(true);
  return p;
}

WhiteningStats whitening_stats(std::span<const double> samples, std::size_t channels,
                               std::size_t count, double eps) {
  if (samples.size() != channels * count) throw ShapeError("whitening sample matrix size");
  const RowMat f = CMapMat(samples.data(), channels, count);
  const Decomposition d = decompose(f, eps);
  WhiteningStats s;
  s.mean.assign(d.mean.data(), d.mean.data() + channels);
  RowMat cov = (d.centered * d.centered.transpose()) / static_cast<double>(count);
  s.covariance.assign(cov.data(), cov.data() + channels * channels);
  RowMat wh = d.whiten;
  s.whiten.assign(wh.data(), wh.data() + channels * channels);
  s.eigenvalues.resize(channels);
  for (std::size_t i = 0; i < channels; ++i) s.eigenvalues[i] = d.shifted[i] - eps;
  RowMat ev = d.eigvec;
  s.eigenvectors.assign(ev.data(), ev.data() + channels * channels);
  return s;
}

Tensor implicit_deconv_1x1(const Tensor& x, IDParams& p, IdMode mode, bool update_running) {
  if (!x.defined() || x.shape().rank() != 4) throw ShapeError("implicit_deconv expects NCHW");
  const Shape& s = x.shape();
  const std::size_t n = s.n(), c = s.c(), plane = s.h() * s.w(), count = n * plane;
  const Shape& ws = p.weight.shape();
  if (ws.rank() != 2 || ws[1] != c)
    throw ShapeError("implicit_deconv weight " + ws.str() + " does not take " + std::to_string(c) +
                     " channels");
  const std::size_t cout = ws[0];
  if (!all_finite(x.data())) throw NumericError("implicit_deconv: non-finite input");
  const RowMat features = to_features(x.data(), n, c, plane);
  const CMapMat w(p.weight.data().data(), cout, c);

  Tensor y(Shape{n, cout, s.h(), s.w()});
  Tensor weight = p.weight;

  if (mode == IdMode::kInfer) {
    const Eigen::Map<const Vec> mu(p.running_mean.data().data(), c);
    const Mat dm = CMapMat(p.running_whiten.data().data(), c, c);
    const Mat a = w * dm;
    const RowMat out = (a * features).colwise() - a * mu;
    from_features(out, n, cout, plane, y.data(), false);
    if (track(y, {&x, &weight})) {
      auto centered = std::make_shared<RowMat>(features.colwise() - mu);
      record(y, [x, weight, a, dm, centered, n, c, cout, plane](std::span<const double> g) mutable {
        const RowMat gf = to_features(g, n, cout, plane);
        if (x.requires_grad()) from_features(a.transpose() * gf, n, c, plane, x.ensure_grad(), true);
        if (weight.requires_grad()) {
          const RowMat gw = gf * (dm * *centered).transpose();
          MapMat(weight.ensure_grad().data(), cout, c) += gw;
        }
      });
    }
    return y;
  }

  if (count < 2) throw ShapeError("implicit_deconv training mode needs at least 2 samples");
  auto d = std::make_shared<Decomposition>(decompose(features, p.eps));
  const Mat a = w * d->whiten;
  // Folded form: X (D W^T) - mu (D W^T), here in column layout.
  const RowMat out = (a * features).colwise() - a * d->mean;
  from_features(out, n, cout, plane, y.data(), false);

  if (update_running) {
    const double m = p.momentum;
    auto rm = p.running_mean.data();
    auto rw = p.running_whiten.data();
    for (std::size_t i = 0; i < c; ++i) rm[i] = m * rm[i] + (1.0 - m) * d->mean[i];
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        rw[i * c + j] = m * rw[i * c + j] + (1.0 - m) * d->whiten(i, j);
  }

  if (track(y, {&x, &weight})) {
    record(y, [x, weight, d, n, c, cout, plane](std::span<const double> g) mutable {
      const auto count = static_cast<double>(n * plane);
      const RowMat gf = to_features(g, n, cout, plane);
      const CMapMat w(weight.data().data(), cout, c);
      const RowMat z = d->whiten * d->centered;
      if (weight.requires_grad()) MapMat(weight.ensure_grad().data(), cout, c) += gf * z.transpose();
      if (!x.requires_grad()) return;
      const RowMat gz = w.transpose() * gf;
      RowMat gxc = d->whiten * gz;
      const Mat gd = gz * d->centered.transpose();
      const Mat gds = 0.5 * (gd + gd.transpose());
      // Derivative of the inverse square root through the eigendecomposition
      // (divided differences of f(a) = a^-1/2 in closed form).
      const Vec sq = d->shifted.cwiseSqrt();
      Mat inner = d->eigvec.transpose() * gds * d->eigvec;
      for (Eigen::Index i = 0; i < inner.rows(); ++i)
        for (Eigen::Index j = 0; j < inner.cols(); ++j)
          inner(i, j) *= -1.0 / (sq[i] * sq[j] * (sq[i] + sq[j]));
      const Mat gcov = d->eigvec * inner * d->eigvec.transpose();
      gxc.noalias() += (2.0 / count) * gcov * d->centered;
      const Vec gmean = gxc.rowwise().mean();
      gxc.colwise() -= gmean;
      from_features(gxc, n, c, plane, x.ensure_grad(), true);
    });
  }
  return y;
}

std::vector<double> id_apply_explicit(std::span<const double> samples, std::size_t channels,
                                      std::size_t count, std::span<const double> mean,
                                      std::span<const double> whiten,
                                      std::span<const double> weight, std::size_t cout) {
  std::vector<double> out(cout * count, 0.0), centered(channels), white(channels);
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t c = 0; c < channels; ++c) centered[c] = samples[c * count + s] - mean[c];
    for (std::size_t j = 0; j < channels; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < channels; ++c) acc += centered[c] * whiten[c * channels + j];
      white[j] = acc;
    }
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < channels; ++j) acc += white[j] * weight[o * channels + j];
      out[o * count + s] = acc;
    }
  }
  return out;
}

std::vector<double> id_apply_folded(std::span<const double> samples, std::size_t channels,
                                    std::size_t count, std::span<const double> mean,
                                    std::span<const double> whiten,
                                    std::span<const double> weight, std::size_t cout) {
  // A = D W^T (channels x cout); y = x A - mu A.
  std::vector<double> a(channels * cout, 0.0), bias(cout, 0.0), out(cout * count, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < channels; ++j) acc += whiten[c * channels + j] * weight[o * channels + j];
      a[c * cout + o] = acc;
    }
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t c = 0; c < channels; ++c) bias[o] += mean[c] * a[c * cout + o];
  for (std::size_t s = 0; s < count; ++s)
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (std::size_t c = 0; c < channels; ++c) acc += samples[c * count + s] * a[c * cout + o];
      out[o * count + s] = acc - bias[o];
    }
  return out;
}

}  // namespace sapm
