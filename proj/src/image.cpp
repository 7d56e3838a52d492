#include "sapm/image.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numbers>
#include <string>

#include "sapm/bytes.hpp"
#include "sapm/errors.hpp"
#include "sapm/rng.hpp"

namespace sapm {

// ---------------------------------------------------------------------------
// PPM

Image parse_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 6) throw FormatError("PPM header value too large");
    }
    if (digits == 0) throw FormatError("malformed PPM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw FormatError("unsupported image format (expected binary PPM P6)");
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (maxval != 255) throw FormatError("unsupported PPM maxval " + std::to_string(maxval));
  if (w == 0 || h == 0) throw FormatError("PPM has zero size");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("malformed PPM header");
  ++pos;
  if (bytes.size() - pos < w * h * 3) throw FormatError("PPM pixel data is truncated");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), w * h * 3, img.rgb.begin());
  return img;
}

Image read_ppm(const std::string& path) { return parse_ppm(read_file(path)); }

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

void write_ppm(const Image& img, const std::string& path) { write_file(path, encode_ppm(img)); }

// ---------------------------------------------------------------------------

std::size_t round_up(std::size_t v, std::size_t multiple) {
  return (v + multiple - 1) / multiple * multiple;
}

Tensor images_to_tensor(const std::vector<Image>& images, std::size_t pw, std::size_t ph) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: no images");
  Tensor t(Shape{images.size(), 3, ph, pw});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.width == 0 || img.height == 0 || img.width > pw || img.height > ph)
      throw ShapeError("image does not fit the padded size");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < ph; ++y)
        for (std::size_t x = 0; x < pw; ++x)
          t.at(n, c, y, x) = img.at(std::min(x, img.width - 1), std::min(y, img.height - 1), c) / 255.0;
  }
  return t;
}

Tensor image_to_tensor(const Image& img, std::size_t pw, std::size_t ph) {
  return images_to_tensor({img}, pw, ph);
}

Image tensor_to_image(const Tensor& t, std::size_t index, std::size_t width, std::size_t height) {
  const Shape& s = t.shape();
  if (s.rank() != 4 || s.c() != 3 || index >= s.n() || width > s.w() || height > s.h())
    throw ShapeError("tensor_to_image: bad shape " + s.str());
  Image img(width, height);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double v = std::clamp(t.at(index, c, y, x), 0.0, 1.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Image crop(const Image& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > img.width || y0 + h > img.height) throw ShapeError("crop outside image");
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(img.rgb.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * img.width + x0) * 3), w * 3,
                out.rgb.begin() + static_cast<std::ptrdiff_t>(y * w * 3));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic images

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Lattice value noise with a per-octave random table.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, std::size_t cells) : cells_(cells), v_((cells + 1) * (cells + 1)) {
    for (double& x : v_) x = rng.uniform(-1.0, 1.0);
  }
  double at(double u, double v) const {  // u, v in [0, 1]
    const double fx = u * cells_, fy = v * cells_;
    const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cells_ - 1);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), cells_ - 1);
    const double tx = smoothstep(fx - x0), ty = smoothstep(fy - y0);
    auto g = [&](std::size_t x, std::size_t y) { return v_[y * (cells_ + 1) + x]; };
    const double a = g(x0, y0) + tx * (g(x0 + 1, y0) - g(x0, y0));
    const double b = g(x0, y0 + 1) + tx * (g(x0 + 1, y0 + 1) - g(x0, y0 + 1));
    return a + ty * (b - a);
  }

 private:
  std::size_t cells_;
  std::vector<double> v_;
};

}  // namespace

Image synthetic_image(std::size_t width, std::size_t height, std::uint64_t seed) {
  if (width == 0 || height == 0) throw std::invalid_argument("synthetic_image: empty size");
  Rng rng(mix_seed(seed, 0x5eed));
  std::array<double, 3> c0{}, c1{};
  for (std::size_t c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1, 0.9);
    c1[c] = rng.uniform(0.1, 0.9);
  }
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);

  struct Shape2 {
    int kind;
    double cx, cy, rx, ry, soft;
    std::array<double, 3> color;
  };
  std::vector<Shape2> shapes(3 + rng.below(6));
  for (auto& s : shapes) {
    s.kind = static_cast<int>(rng.below(2));
    s.cx = rng.uniform(0.0, 1.0);
    s.cy = rng.uniform(0.0, 1.0);
    s.rx = rng.uniform(0.05, 0.35);
    s.ry = rng.uniform(0.05, 0.35);
    s.soft = rng.uniform(0.005, 0.05);
    for (double& c : s.color) c = rng.uniform(0.0, 1.0);
  }
  std::vector<ValueNoise> octaves;
  for (std::size_t cells : {4, 8, 16, 32}) octaves.emplace_back(rng, cells);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(0.5, 1.0);
  const double texture = rng.uniform(0.03, 0.15);

  Image img(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      const double t = std::clamp(0.5 + 0.7 * ((u - 0.5) * gx + (v - 0.5) * gy), 0.0, 1.0);
      std::array<double, 3> px{};
      for (std::size_t c = 0; c < 3; ++c) px[c] = c0[c] + t * (c1[c] - c0[c]);
      for (const auto& s : shapes) {
        const double dx = (u - s.cx) / s.rx, dy = (v - s.cy) / s.ry;
        const double d = s.kind == 0 ? std::sqrt(dx * dx + dy * dy) : std::max(std::abs(dx), std::abs(dy));
        const double alpha = std::clamp((1.0 - d) * std::min(s.rx, s.ry) / s.soft, 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c) px[c] += alpha * (s.color[c] - px[c]);
      }
      double n = 0.0, amp = 1.0;
      for (const auto& o : octaves) {
        n += amp * o.at(u, v);
        amp *= 0.5;
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = px[c] + texture * tint[c] * n + 0.01 * rng.normal();
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
      }
    }
  return img;
}

// ---------------------------------------------------------------------------
// Metrics

double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw ShapeError("image sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.rgb.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

namespace {

constexpr std::array<double, 5> kMsWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr std::size_t kWin = 11;

struct Plane {
  std::size_t w, h;
  std::vector<double> v;
  double at(std::size_t x, std::size_t y) const { return v[y * w + x]; }
};

// Valid-mode separable Gaussian filter.
Plane filter(const Plane& p, const std::array<double, kWin>& g) {
  const std::size_t ow = p.w - kWin + 1, oh = p.h - kWin + 1;
  Plane tmp{ow, p.h, std::vector<double>(ow * p.h)};
  for (std::size_t y = 0; y < p.h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kWin; ++i) acc += g[i] * p.at(x + i, y);
      tmp.v[y * ow + x] = acc;
    }
  Plane out{ow, oh, std::vector<double>(ow * oh)};
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < kWin; ++i) acc += g[i] * tmp.at(x, y + i);
      out.v[y * ow + x] = acc;
    }
  return out;
}

Plane downsample(const Plane& p) {
  Plane out{p.w / 2, p.h / 2, {}};
  out.v.resize(out.w * out.h);
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x)
      out.v[y * out.w + x] = 0.25 * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) +
                                     p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
  return out;
}

// Mean SSIM and mean contrast-structure term of one scale.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, const std::array<double, kWin>& g) {
  constexpr double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  Plane aa = a, bb = b, ab = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Plane ma = filter(a, g), mb = filter(b, g), saa = filter(aa, g), sbb = filter(bb, g),
              sab = filter(ab, g);
  double ssim = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < ma.v.size(); ++i) {
    const double mu1 = ma.v[i], mu2 = mb.v[i];
    const double v1 = saa.v[i] - mu1 * mu1, v2 = sbb.v[i] - mu2 * mu2, cov = sab.v[i] - mu1 * mu2;
    const double c = (2.0 * cov + c2) / (v1 + v2 + c2);
    cs += c;
    ssim += c * (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
  }
  const double n = static_cast<double>(ma.v.size());
  return {ssim / n, cs / n};
}

}  // namespace

MsSsim ms_ssim(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw ShapeError("image sizes differ");
  const std::size_t side = std::min(a.width, a.height);
  if (side < kWin) throw ShapeError("ms_ssim needs images of at least 11 px per side");
  std::size_t scales = 1;
  while (scales < kMsWeights.size() && kWin << scales <= side) ++scales;

  std::array<double, kWin> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    total += g[i];
  }
  for (double& v : g) v /= total;
  double wsum = 0.0;
  for (std::size_t s = 0; s < scales; ++s) wsum += kMsWeights[s];

  double result = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    Plane pa{a.width, a.height, std::vector<double>(a.width * a.height)};
    Plane pb = pa;
    for (std::size_t i = 0; i < pa.v.size(); ++i) {
      pa.v[i] = a.rgb[i * 3 + c];
      pb.v[i] = b.rgb[i * 3 + c];
    }
    double value = 1.0;
    for (std::size_t s = 0; s < scales; ++s) {
      const auto [ssim, cs] = ssim_terms(pa, pb, g);
      const double term = s + 1 == scales ? ssim : cs;
      value *= std::pow(std::max(term, 0.0), kMsWeights[s] / wsum);
      if (s + 1 < scales) {
        pa = downsample(pa);
        pb = downsample(pb);
      }
    }
    result += value / 3.0;
  }
  return {result, scales};
}

}  // namespace sapm
