#include "sapm/model.hpp"

#include <cmath>

#include "sapm/errors.hpp"
#include "sapm/rng.hpp"

namespace sapm {

namespace {

const std::vector<std::string_view> kConfigKeys = {
    "channels", "latent_channels", "levels", "mixtures", "kernel",
    "lambda",   "p_min",           "p_max",  "leaky_slope", "seed"};

ConvLayer make_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Rng& rng) {
  ConvLayer c;
  c.weight = uniform_fan_in(Shape{cout, cin, k, k}, cin * k * k, rng);
  c.bias = Tensor(Shape{cout}).set_requires_grad(true);
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

ConvLayer make_tconv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, Rng& rng) {
  ConvLayer c;
  // Fan-in of a transposed conv output pixel is cin * k^2 / stride^2.
  c.weight = uniform_fan_in(Shape{cin, cout, k, k}, cin * k * k / (stride * stride), rng);
  c.bias = Tensor(Shape{cout}).set_requires_grad(true);
  c.stride = stride;
  c.pad = k / 2;
  c.output_pad = stride - 1;
  c.transposed = true;
  return c;
}

void add_conv(NamedTensors& out, const std::string& name, const ConvLayer& c) {
  out.emplace_back(name + ".weight", c.weight);
  out.emplace_back(name + ".bias", c.bias);
}

void add_gdn(NamedTensors& out, const std::string& name, const GDNParams& g) {
  out.emplace_back(name + ".beta", g.beta_storage);
  out.emplace_back(name + ".gamma", g.gamma_storage);
}

void add_branches(NamedTensors& out, const std::string& name, const ShiftWeights& s,
                  const AdderFilters& a, const IDParams& id) {
  out.emplace_back(name + ".shift.weight", s.weight);
  if (s.bias.defined()) out.emplace_back(name + ".shift.bias", s.bias);
  out.emplace_back(name + ".adder.filters", a.filters);
  if (a.bias.defined()) out.emplace_back(name + ".adder.bias", a.bias);
  out.emplace_back(name + ".id.weight", id.weight);
}

}  // namespace

void ModelConfig::validate() const {
  if (levels < 2) throw std::invalid_argument("levels must be at least 2");
  if (channels == 0 || latent_channels == 0) throw std::invalid_argument("channel counts must be positive");
  if (mixtures < 1 || mixtures > kMaxMixtures) throw std::invalid_argument("mixtures must be in 1..5");
  if (kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (p_min > p_max) throw std::invalid_argument("p_min must not exceed p_max");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  if (downsample() > 4096) throw std::invalid_argument("too many levels");
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("channels", std::to_string(channels));
  kv.set("latent_channels", std::to_string(latent_channels));
  kv.set("levels", std::to_string(levels));
  kv.set("mixtures", std::to_string(mixtures));
  kv.set("kernel", std::to_string(kernel));
  kv.set("lambda", format_double(lambda));
  kv.set("p_min", std::to_string(p_min));
  kv.set("p_max", std::to_string(p_max));
  kv.set("leaky_slope", format_double(leaky_slope));
  kv.set("seed", std::to_string(seed));
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  auto size = [&](std::string_view key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw FormatError("config key '" + std::string(key) + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.channels = size("channels", c.channels);
  c.latent_channels = size("latent_channels", c.latent_channels);
  c.levels = size("levels", c.levels);
  c.mixtures = size("mixtures", c.mixtures);
  c.kernel = size("kernel", c.kernel);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.p_min = static_cast<int>(kv.get_int("p_min", c.p_min));
  c.p_max = static_cast<int>(kv.get_int("p_max", c.p_max));
  c.leaky_slope = kv.get_double("leaky_slope", c.leaky_slope);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  return c;
}

std::uint8_t ModelConfig::id() const {
  KeyValues kv = to_kv();
  std::string text;
  for (const auto& [k, v] : kv.entries())
    if (k != "lambda" && k != "seed") text += k + "=" + v + "\n";
  std::uint32_t h = 2166136261u;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 16777619u;
  }
  return static_cast<std::uint8_t>(h & 0xFF);
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return transposed ? transposed_conv2d(x, weight, bias, stride, pad, output_pad)
                    : conv2d(x, weight, bias, stride, pad);
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(config.seed);
  const std::size_t n = config.channels, mc = config.latent_channels, k = config.kernel;
  SapmOptions opt;
  opt.kernel = k;
  opt.shift_range = ShiftRange{config.p_min, config.p_max};

  m.enc_in = make_conv(3, n, k, 2, rng);
  m.enc_gdn.push_back(GDNParams::identity_init(n, false));
  for (std::size_t i = 0; i + 1 < config.levels; ++i) {
    const bool last = i + 2 == config.levels;
    m.enc_blocks.push_back(SapmEBlock::create(n, last ? mc : n, 2, opt, rng));
    if (!last) m.enc_gdn.push_back(GDNParams::identity_init(n, false));
  }
  for (std::size_t i = 0; i + 1 < config.levels; ++i) {
    m.dec_blocks.push_back(SapmDBlock::create(i == 0 ? mc : n, n, 2, opt, rng));
    m.dec_igdn.push_back(GDNParams::identity_init(n, true));
  }
  m.dec_out = make_tconv(n, 3, k, 2, rng);

  m.hyper_enc.push_back(make_conv(mc, n, 3, 1, rng));
  m.hyper_enc.push_back(make_conv(n, n, 5, 2, rng));
  m.hyper_enc.push_back(make_conv(n, n, 5, 2, rng));
  m.hyper_dec.push_back(make_tconv(n, n, 5, 2, rng));
  m.hyper_dec.push_back(make_tconv(n, n, 5, 2, rng));
  const std::size_t km = config.mixtures * mc;
  m.hyper_dec.push_back(make_conv(n, 3 * km, 3, 1, rng));
  // Start the mixture head at equal weights, zero means and unit scales.
  auto head_bias = m.hyper_dec.back().bias.data();
  const double s0 = inverse_softplus_value(1.0 - kScaleMin);
  for (std::size_t i = 2 * km; i < 3 * km; ++i) head_bias[i] = s0;

  m.prior = FactorizedParams::init(n);
  return m;
}

Tensor Model::encode(const Tensor& x, IdMode mode) {
  Tensor h = gdn(enc_in.forward(x), enc_gdn[0]);
  for (std::size_t i = 0; i < enc_blocks.size(); ++i) {
    h = sapm_e_forward(h, enc_blocks[i], mode);
    if (i + 1 < enc_gdn.size()) h = gdn(h, enc_gdn[i + 1]);
  }
  return h;
}

Tensor Model::decode(const Tensor& y_hat, IdMode mode) {
  Tensor h = y_hat;
  for (std::size_t i = 0; i < dec_blocks.size(); ++i)
    h = gdn(sapm_d_forward(h, dec_blocks[i], mode), dec_igdn[i]);
  return dec_out.forward(h);
}

Tensor Model::hyper_encode(const Tensor& y) const {
  Tensor h = leaky_relu(hyper_enc[0].forward(y), config.leaky_slope);
  h = leaky_relu(hyper_enc[1].forward(h), config.leaky_slope);
  return hyper_enc[2].forward(h);
}

LmmParams Model::hyper_decode(const Tensor& z_hat) const {
  Tensor h = leaky_relu(hyper_dec[0].forward(z_hat), config.leaky_slope);
  h = leaky_relu(hyper_dec[1].forward(h), config.leaky_slope);
  return LmmParams{hyper_dec[2].forward(h), config.mixtures};
}

NamedTensors Model::named_parameters() const {
  NamedTensors out;
  add_conv(out, "enc.in", enc_in);
  for (std::size_t i = 0; i < enc_gdn.size(); ++i) add_gdn(out, "enc.gdn" + std::to_string(i), enc_gdn[i]);
  for (std::size_t i = 0; i < enc_blocks.size(); ++i) {
    const auto& b = enc_blocks[i];
    add_branches(out, "enc.sapm" + std::to_string(i), b.shift, b.adder, b.id);
  }
  for (std::size_t i = 0; i < dec_blocks.size(); ++i) {
    const auto& b = dec_blocks[i];
    const std::string name = "dec.sapm" + std::to_string(i);
    add_branches(out, name, b.shift, b.adder, b.id);
    out.emplace_back(name + ".shortcut.weight", b.shortcut_weight);
    out.emplace_back(name + ".shortcut.bias", b.shortcut_bias);
    add_gdn(out, "dec.igdn" + std::to_string(i), dec_igdn[i]);
  }
  add_conv(out, "dec.out", dec_out);
  for (std::size_t i = 0; i < hyper_enc.size(); ++i) add_conv(out, "hyper_enc." + std::to_string(i), hyper_enc[i]);
  for (std::size_t i = 0; i < hyper_dec.size(); ++i) add_conv(out, "hyper_dec." + std::to_string(i), hyper_dec[i]);
  out.emplace_back("prior.mean", prior.mean);
  out.emplace_back("prior.scale", prior.scale_raw);
  return out;
}

NamedTensors Model::named_state() const {
  NamedTensors out = named_parameters();
  for (std::size_t i = 0; i < enc_blocks.size(); ++i) {
    const std::string name = "enc.sapm" + std::to_string(i) + ".id";
    out.emplace_back(name + ".running_mean", enc_blocks[i].id.running_mean);
    out.emplace_back(name + ".running_whiten", enc_blocks[i].id.running_whiten);
  }
  for (std::size_t i = 0; i < dec_blocks.size(); ++i) {
    const std::string name = "dec.sapm" + std::to_string(i) + ".id";
    out.emplace_back(name + ".running_mean", dec_blocks[i].id.running_mean);
    out.emplace_back(name + ".running_whiten", dec_blocks[i].id.running_whiten);
  }
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<Tensor> Model::adder_filters() const {
  std::vector<Tensor> out;
  for (const auto& b : enc_blocks) out.push_back(b.adder.filters);
  for (const auto& b : dec_blocks) out.push_back(b.adder.filters);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (auto& [name, t] : named_parameters()) total += t.numel();
  return total;
}

}  // namespace sapm
