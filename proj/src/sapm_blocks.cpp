#include "sapm/sapm_blocks.hpp"

#include <cmath>
#include <string>

#include "sapm/errors.hpp"

namespace sapm {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  Tensor t(shape);
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

namespace {

// The adder and its ID whitening run at adder_out channels; ID widens them
// to branch_out.
void init_branches(std::size_t cin, std::size_t branch_out, std::size_t adder_out,
                   const SapmOptions& o, Rng& rng, ShiftWeights& shift, AdderFilters& adder,
                   IDParams& id) {
  const std::size_t k = o.kernel;
  const std::size_t fan_in = cin * k * k;
  shift.range = o.shift_range;
  shift.weight = uniform_fan_in(Shape{branch_out, cin, k, k}, fan_in, rng);
  if (o.shift_bias) shift.bias = Tensor(Shape{branch_out}).set_requires_grad(true);
  adder.filters = uniform_fan_in(Shape{adder_out, cin, k, k}, fan_in, rng);
  if (o.adder_bias) adder.bias = Tensor(Shape{adder_out}).set_requires_grad(true);
  id = IDParams::replicate_init(adder_out, branch_out / adder_out, o.id_eps);
}

void check_input(const Tensor& x, std::size_t cin, const char* block) {
  if (x.shape().rank() != 4 || x.shape().c() != cin)
    throw ShapeError(std::string(block) + " expects " + std::to_string(cin) +
                     " input channels, got " + x.shape().str());
}

Tensor accumulate(const Tensor& acc, const Tensor& term) {
  if (!acc.defined()) return term;
  if (!(acc.shape() == term.shape()))
    throw ShapeError("SAPM branch shapes differ: " + acc.shape().str() + " vs " +
                     term.shape().str());
  return add(acc, term);
}

}  // namespace

SapmEBlock SapmEBlock::create(std::size_t cin, std::size_t cout, std::size_t stride,
                              const SapmOptions& options, Rng& rng) {
  SapmEBlock b;
  b.cin = cin;
  b.cout = cout;
  b.stride = stride;
  b.options = options;
  init_branches(cin, cout, cout, options, rng, b.shift, b.adder, b.id);
  return b;
}

std::vector<Tensor> SapmEBlock::parameters() const {
  std::vector<Tensor> p{shift.weight, adder.filters, id.weight};
  if (shift.bias.defined()) p.push_back(shift.bias);
  if (adder.bias.defined()) p.push_back(adder.bias);
  return p;
}

SapmDBlock SapmDBlock::create(std::size_t cin, std::size_t cout, std::size_t upscale,
                              const SapmOptions& options, Rng& rng) {
  SapmDBlock b;
  b.cin = cin;
  b.cout = cout;
  b.upscale = upscale;
  b.options = options;
  const std::size_t branch_out = cout * upscale * upscale;
  init_branches(cin, branch_out, cout, options, rng, b.shift, b.adder, b.id);
  b.shortcut_weight = uniform_fan_in(Shape{branch_out, cin, 1, 1}, cin, rng);
  b.shortcut_bias = Tensor(Shape{branch_out}).set_requires_grad(true);
  return b;
}

std::vector<Tensor> SapmDBlock::parameters() const {
  std::vector<Tensor> p{shift.weight, adder.filters, id.weight, shortcut_weight, shortcut_bias};
  if (shift.bias.defined()) p.push_back(shift.bias);
  if (adder.bias.defined()) p.push_back(adder.bias);
  return p;
}

Tensor sapm_e_forward(const Tensor& x, SapmEBlock& block, IdMode mode, SapmBranches branches) {
  check_input(x, block.cin, "SAPM-E");
  const std::size_t pad = block.options.kernel / 2;
  Tensor y;
  if (branches.shift) y = accumulate(y, shift_conv2d(x, block.shift, block.stride, pad));
  if (branches.adder)
    y = accumulate(y, implicit_deconv_1x1(adder_conv2d(x, block.adder, block.stride, pad),
                                          block.id, mode));
  if (branches.shortcut)
    y = accumulate(y, channel_adapt(avg_pool2d(x, block.stride, block.stride), block.cout));
  if (!y.defined()) throw std::invalid_argument("SAPM-E with every branch disabled");
  return y;
}

Tensor sapm_d_forward(const Tensor& x, SapmDBlock& block, IdMode mode, SapmBranches branches) {
  check_input(x, block.cin, "SAPM-D");
  const std::size_t pad = block.options.kernel / 2;
  Tensor y;
  if (branches.shift) y = accumulate(y, shift_conv2d(x, block.shift, 1, pad));
  if (branches.adder)
    y = accumulate(y, implicit_deconv_1x1(adder_conv2d(x, block.adder, 1, pad), block.id, mode));
  if (branches.shortcut)
    y = accumulate(y, conv2d(x, block.shortcut_weight, block.shortcut_bias, 1, 0));
  if (!y.defined()) throw std::invalid_argument("SAPM-D with every branch disabled");
  return pixel_shuffle(y, block.upscale);
}

}  // namespace sapm
