#include <omp.h>

#include <cmath>
#include <vector>

#include "doctest.h"
#include "grad_cases.hpp"
#include "sapm/errors.hpp"
#include "sapm/kernels.hpp"
#include "sapm/ops.hpp"

using namespace sapm;
using namespace sapm::testing;
namespace k = sapm::kernels;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2, 2);
  return v;
}

k::ConvGeometry random_geometry(Rng& rng) {
  k::ConvGeometry g;
  g.batch = pick(rng, 1, 3);
  g.cin = pick(rng, 1, 6);
  g.cout = pick(rng, 1, 9);
  g.k = pick(rng, 1, 5);
  g.stride = pick(rng, 1, 3);
  g.pad = rng.below(g.k);
  g.h = pick(rng, g.k, g.k + 12);
  g.w = pick(rng, g.k, g.k + 20);
  return g;
}

}  // namespace

TEST_CASE("fast kernels match the serial reference") {
  Rng rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const k::ConvGeometry g = random_geometry(rng);
    CAPTURE(trial);
    const auto x = random_values(g.in_size(), rng), w = random_values(g.weight_size(), rng),
               gy = random_values(g.out_size(), rng);
    std::vector<double> a(g.out_size()), b(g.out_size());
    k::conv_forward(g, x, w, a);
    k::reference::conv_forward(g, x, w, b);
    CHECK(max_rel_diff(a, b) < 1e-12);
    k::adder_forward(g, x, w, a);
    k::reference::adder_forward(g, x, w, b);
    CHECK(max_rel_diff(a, b) < 1e-12);

    // Backward kernels accumulate onto what is already there.
    std::vector<double> gx1(g.in_size(), 0.5), gx2(g.in_size(), 0.5);
    k::conv_backward_input(g, gy, w, gx1);
    k::reference::conv_backward_input(g, gy, w, gx2);
    CHECK(max_rel_diff(gx1, gx2) < 1e-12);
    std::fill(gx1.begin(), gx1.end(), -0.25);
    std::fill(gx2.begin(), gx2.end(), -0.25);
    k::adder_backward_input(g, x, w, gy, gx1);
    k::reference::adder_backward_input(g, x, w, gy, gx2);
    CHECK(max_rel_diff(gx1, gx2) < 1e-12);

    std::vector<double> gw1(g.weight_size(), 1.0), gw2(g.weight_size(), 1.0);
    k::conv_backward_weight(g, x, gy, gw1);
    k::reference::conv_backward_weight(g, x, gy, gw2);
    CHECK(max_rel_diff(gw1, gw2) < 1e-12);
    std::fill(gw1.begin(), gw1.end(), 0.0);
    std::fill(gw2.begin(), gw2.end(), 0.0);
    k::adder_backward_filter(g, x, w, gy, gw1);
    k::reference::adder_backward_filter(g, x, w, gy, gw2);
    CHECK(max_rel_diff(gw1, gw2) < 1e-12);
  }
}

TEST_CASE("kernel results do not depend on the thread count") {
  Rng rng(22);
  k::ConvGeometry g{6, 4, 13, 11, 5, 3, 2, 1};
  const auto x = random_values(g.in_size(), rng), w = random_values(g.weight_size(), rng),
             gy = random_values(g.out_size(), rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> y(g.out_size()), gx(g.in_size()), gw(g.weight_size()), gf(g.weight_size());
    k::conv_forward(g, x, w, y);
    k::conv_backward_weight(g, x, gy, gw);
    k::adder_backward_input(g, x, w, gy, gx);
    k::adder_backward_filter(g, x, w, gy, gf);
    y.insert(y.end(), gx.begin(), gx.end());
    y.insert(y.end(), gw.begin(), gw.end());
    y.insert(y.end(), gf.begin(), gf.end());
    return y;
  };
  const int saved = omp_get_max_threads();
  const auto one = run(1), four = run(4);
  omp_set_num_threads(saved);
  CHECK(one == four);
}

TEST_CASE("geometry validation") {
  k::ConvGeometry g{1, 1, 2, 2, 1, 5, 1, 0};
  CHECK_THROWS_AS(g.validate(), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 3, 3, 3}), Tensor{}, 1, 0), ShapeError);
}

TEST_CASE("shift quantizer") {
  const ShiftRange r{};
  int p = 0;
  CHECK(shift_quantize_value(0.25, r, &p) == 0.25);
  CHECK(p == -2);
  CHECK(shift_quantize_value(-6.0, r, &p) == -8.0);
  CHECK(p == 3);
  CHECK(shift_quantize_value(0.0, r) == std::ldexp(1.0, -8));
  CHECK(shift_quantize_value(1e9, r) == 16.0);

  const ShiftQuantized q = shift_quantize(Tensor(Shape{3}, {0.25, -6.0, 3.0}), r);
  CHECK(values(q.sign) == std::vector<double>{1, -1, 1});
  CHECK(values(q.exponent) == std::vector<double>{-2, 3, 2});
  CHECK(values(q.weight) == std::vector<double>{0.25, -8, 4});
  CHECK_THROWS(shift_quantize(Tensor(Shape{1}), ShiftRange{2, 2}));
}

TEST_CASE("shift convolution") {
  Rng rng(23);
  SUBCASE("1x1 kernel 3.0 acts as 4x") {
    Tensor x = random_tensor(Shape{1, 1, 3, 3}, rng);
    const Tensor y = shift_conv2d(x, ShiftWeights{Tensor(Shape{1, 1, 1, 1}, {3.0}), Tensor{}, ShiftRange{}}, 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == 4.0 * x[i]);
  }
  SUBCASE("powers of two are a fixed point") {
    Tensor w(Shape{2, 2, 3, 3});
    for (double& v : w.data()) v = (rng.uniform() < 0.5 ? -1 : 1) * std::ldexp(1.0, static_cast<int>(rng.below(8)) - 4);
    Tensor x = random_tensor(Shape{1, 2, 5, 5}, rng);
    CHECK(values(shift_conv2d(x, ShiftWeights{w, Tensor{}, ShiftRange{}}, 1, 1)) ==
          values(conv2d(x, w, Tensor{}, 1, 1)));
  }
  SUBCASE("zero input, no bias") {
    const Tensor y = shift_conv2d(Tensor(Shape{1, 2, 4, 4}),
                                  ShiftWeights{random_tensor(Shape{3, 2, 3, 3}, rng), Tensor{}, ShiftRange{}}, 1, 1);
    for (double v : y.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("adder convolution") {
  const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(adder_conv2d(x, AdderFilters{Tensor(Shape{1, 1, 2, 2}, 1.0), Tensor{}}, 1, 0).item() == -6.0);
  CHECK(adder_conv2d(x, AdderFilters{x.detach(), Tensor{}}, 1, 0).item() == 0.0);

  Rng rng(24);
  Tensor xs = random_tensor(Shape{2, 3, 6, 6}, rng);
  Tensor f = random_tensor(Shape{4, 3, 3, 3}, rng);
  const double c = 1.75;
  const Tensor y0 = adder_conv2d(xs, AdderFilters{f, Tensor{}}, 1, 0);
  const Tensor y1 = adder_conv2d(add(xs, c), AdderFilters{add(f, c), Tensor{}}, 1, 0);
  CHECK(max_rel_diff(y0.data(), y1.data()) < 1e-12);
}

TEST_CASE("adder and shift surrogate gradients against explicit loops") {
  Rng rng(25);
  for (int i = 0; i < 20; ++i) {
    const std::size_t kk = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = rng.below(kk);
    Tensor x = random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, kk, kk + 4), pick(rng, kk, kk + 4)}, rng, -2, 2);
    Tensor f = random_tensor(Shape{pick(rng, 1, 3), x.shape().c(), kk, kk}, rng, -2, 2);
    x.set_requires_grad(true);
    f.set_requires_grad(true);
    Tape tape;
    Tensor y;
    {
      TapeScope scope(tape);
      y = adder_conv2d(x, AdderFilters{f, Tensor{}}, stride, pad);
    }
    const Tensor gy = random_tensor(y.shape(), rng);
    tape.backward(y, gy);
    const AdderOracle o = adder_oracle(x, f, gy, stride, pad);
    CHECK(max_rel_diff(y.data(), o.y) < 1e-12);
    CHECK(max_rel_diff(x.grad(), o.gx) < 1e-12);
    CHECK(max_rel_diff(f.grad(), o.gf) < 1e-12);
  }

  Tensor v = random_tensor(Shape{50}, rng, -5, 5);
  v.set_requires_grad(true);
  Tape tape;
  Tensor q;
  {
    TapeScope scope(tape);
    q = shift_quantize_ste(v, ShiftRange{});
  }
  const Tensor g = random_tensor(q.shape(), rng);
  tape.backward(q, g);
  CHECK(std::vector<double>(v.grad().begin(), v.grad().end()) == values(g));
}

TEST_CASE("adaptive gradient scaling") {
  std::vector<double> g{3.0, 4.0, 0.0, 0.0};
  adaptive_gradient_scale(g, 0.1);
  double norm = 0;
  for (double v : g) norm += v * v;
  CHECK(std::sqrt(norm) == doctest::Approx(0.1 * 2.0));
  CHECK(g[0] / g[1] == doctest::Approx(0.75));
  std::vector<double> zero(4, 0.0);
  adaptive_gradient_scale(zero, 0.1);
  CHECK(zero == std::vector<double>(4, 0.0));
}

TEST_CASE("standard convolutions") {
  Rng rng(26);
  Tensor x = random_tensor(Shape{1, 2, 4, 5}, rng);
  Tensor delta(Shape{2, 2, 3, 3});
  delta.at(0, 0, 1, 1) = 1;
  delta.at(1, 1, 1, 1) = 1;
  CHECK(values(conv2d(x, delta, Tensor{}, 1, 1)) == values(x));
  const Tensor y = conv2d(x, Tensor(Shape{2, 2, 1, 1}, {2, 0, 0, 2}), Tensor{}, 1, 0);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == 2 * x[i]);

  const Tensor t = transposed_conv2d(random_tensor(Shape{1, 2, 7, 5}, rng), random_tensor(Shape{2, 3, 5, 5}, rng),
                                     Tensor{}, 2, 2, 1);
  CHECK(t.shape() == Shape{1, 3, 14, 10});
}

TEST_CASE("pooling, shuffles and channel adaptation") {
  CHECK(avg_pool2d(Tensor(Shape{1, 1, 2, 2}, {1, 3, 5, 7}), 2, 2).item() == 4.0);
  CHECK(avg_pool2d(Tensor(Shape{1, 2, 4, 6}, 2.5), 2, 2).shape() == Shape{1, 2, 2, 3});
  const Tensor pooled = avg_pool2d(Tensor(Shape{1, 2, 4, 6}, 2.5), 2, 2);
  for (double v : pooled.data()) CHECK(v == 2.5);

  const Tensor ps = pixel_shuffle(Tensor(Shape{1, 4, 1, 1}, {1, 2, 3, 4}), 2);
  CHECK(ps.shape() == Shape{1, 1, 2, 2});
  CHECK(values(ps) == std::vector<double>{1, 2, 3, 4});
  Rng rng(27);
  const Tensor x = random_tensor(Shape{2, 8, 3, 5}, rng);
  CHECK(values(pixel_unshuffle(pixel_shuffle(x, 2), 2)) == values(x));
  CHECK(values(pixel_shuffle(x, 1)) == values(x));

  const Tensor ab(Shape{1, 2, 1, 1}, {7, 9});
  CHECK(values(channel_adapt(ab, 5)) == std::vector<double>{7, 9, 7, 9, 7});
  CHECK(values(channel_adapt(ab, 1)) == std::vector<double>{7});
  CHECK(channel_adapt(ab, 2).is(ab));
}

TEST_CASE("gdn") {
  Rng rng(28);
  const Tensor x = random_tensor(Shape{1, 3, 2, 2}, rng);
  CHECK(max_rel_diff(gdn(x, Tensor(Shape{3}, 1.0), Tensor(Shape{3, 3}), false).data(), x.data()) < 1e-15);

  GDNParams p = GDNParams::identity_init(1, false);
  p.beta_storage[0] = nonneg_reparam_storage(0.0);
  p.gamma_storage[0] = nonneg_reparam_storage(1.0);
  const double y = gdn(Tensor(Shape{1, 1, 1, 1}, {2.0}), p).item();
  CHECK(y == doctest::Approx(2.0 / std::sqrt(GDNParams::kBetaMin + 4.0)).epsilon(1e-12));
  CHECK(std::fabs(y - 1.0) < 1e-6);

  const Tensor beta(Shape{1}, {0.7}), gamma(Shape{1, 1}, {0.0});
  const Tensor one = random_tensor(Shape{1, 1, 3, 3}, rng);
  CHECK(max_rel_diff(gdn(gdn(one, beta, gamma, false), beta, gamma, true).data(), one.data()) < 1e-12);
}

TEST_CASE("latent quantization") {
  CHECK(round_half_away(0.4) == 0.0);
  CHECK(round_half_away(-1.6) == -2.0);
  CHECK(round_half_away(2.5) == 3.0);
  CHECK(round_half_away(-2.5) == -3.0);

  Rng rng(29);
  Tensor y = random_tensor(Shape{1, 4, 8, 8}, rng, -5, 5);
  Rng noise(1);
  const Tensor n = quantize_latent(y, QuantMode::kNoise, noise);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(n[i] - y[i]) <= 0.5);

  y.set_requires_grad(true);
  Tape tape;
  Tensor q;
  {
    TapeScope scope(tape);
    q = quantize_latent(y, QuantMode::kRound, noise);
  }
  tape.backward(q, Tensor(q.shape(), 1.0));
  for (double g : y.grad()) CHECK(g == 1.0);
}

TEST_CASE("operator finite-difference gradients") {
  for (const GradCase& gc : smooth_operator_cases()) {
    const bool layer_case = gc.name == "conv2d" || gc.name == "transposed_conv2d" || gc.name == "avg_pool2d" ||
                            gc.name == "pixel_shuffle" || gc.name == "pixel_unshuffle" ||
                            gc.name == "channel_adapt" || gc.name == "leaky_relu" || gc.name == "softplus" ||
                            gc.name == "gdn" || gc.name == "igdn" || gc.name == "nonneg_reparam" ||
                            gc.name == "add_scalar" || gc.name == "mul_scalar";
    if (!layer_case) continue;
    Rng rng(mix_seed(31, gc.name.size()));
    for (int i = 0; i < 20; ++i) {
      GradInstance inst = gc.make(rng);
      CAPTURE(gc.name);
      CHECK(gradcheck(inst.fn, inst.inputs, rng) <= kFdTolerance);
    }
  }
}
