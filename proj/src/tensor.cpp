#include "sapm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sapm/errors.hpp"

namespace sapm {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> extents) {
  if (extents.size() > kMaxRank) throw ShapeError("rank above 4");
  rank_ = extents.size();
  std::copy(extents.begin(), extents.end(), ext_.begin());
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= ext_[i];
  return n;
}

bool Shape::operator==(const Shape& other) const {
  if (rank_ != other.rank_) return false;
  for (std::size_t i = 0; i < rank_; ++i)
    if (ext_[i] != other.ext_[i]) return false;
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << ext_[i];
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : s_(std::make_shared<Storage>()) {
  s_->shape = shape;
  s_->value.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<Storage>()) {
  if (values.size() != shape.numel())
    throw ShapeError("tensor of shape " + shape.str() + " given " + std::to_string(values.size()) +
                     " values");
  s_->shape = shape;
  s_->value.assign(values.begin(), values.end());
}

const Shape& Tensor::shape() const { return s_->shape; }
std::size_t Tensor::numel() const { return s_ ? s_->value.size() : 0; }
std::span<double> Tensor::data() { return s_->value; }
std::span<const double> Tensor::data() const { return s_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return s_->value[0];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const Shape& s = s_->shape;
  return s_->value[((n * s.c() + c) * s.h() + h) * s.w() + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = s_->shape;
  return s_->value[((n * s.c() + c) * s.h() + h) * s.w() + w];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }
std::span<const double> Tensor::grad() const { return s_->grad; }
std::span<double> Tensor::mutable_grad() const { return s_->grad; }

std::span<double> Tensor::ensure_grad() const {
  if (s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() const {
  if (s_) s_->grad.clear();
}

Tensor Tensor::detach() const {
  Tensor t;
  t.s_ = std::make_shared<Storage>();
  t.s_->shape = s_->shape;
  t.s_->value = s_->value;
  return t;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(Tensor output, BackwardFn backward) {
  records_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(Tensor output, const Tensor& seed) {
  // An empty tape is fine when the output is itself a leaf (identity ops
  // return their input).
  if (records_.empty() && !output.requires_grad())
    throw std::logic_error("backward on an empty tape");
  const bool scalars = seed.numel() == 1 && output.numel() == 1;
  if (!(seed.shape() == output.shape()) && !scalars)
    throw ShapeError("seed shape " + seed.shape().str() + " does not match output " +
                     output.shape().str());
  auto g = output.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
  }
}

void Tape::backward(Tensor output) {
  if (output.numel() != 1) throw ShapeError("implicit seed needs a scalar output");
  backward(output, Tensor(output.shape(), 1.0));
}

bool track(Tensor& output, std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t != nullptr && t->requires_grad()) {
      output.set_requires_grad(true);
      return true;
    }
  return false;
}

void record(const Tensor& output, Tape::BackwardFn backward) {
  g_active_tape->record(output, std::move(backward));
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { kSame, kScalar, kChannel };

Broadcast classify(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kScalar;
  if (a.shape().rank() == 4 && b.numel() == a.shape().c()) return Broadcast::kChannel;
  throw ShapeError("cannot broadcast " + b.shape().str() + " onto " + a.shape().str());
}

struct BIndex {
  Broadcast mode;
  std::size_t plane = 1;
  std::size_t channels = 1;
  std::size_t operator()(std::size_t i) const {
    switch (mode) {
      case Broadcast::kSame:
        return i;
      case Broadcast::kScalar:
        return 0;
      case Broadcast::kChannel:
        return (i / plane) % channels;
    }
    return 0;
  }
};

void check_finite(const Tensor& t, const char* what) {
  if (!all_finite(t.data())) throw NumericError(std::string(what) + " produced a non-finite value");
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a, b);
  BIndex bi{mode};
  if (mode == Broadcast::kChannel) {
    bi.plane = a.shape().h() * a.shape().w();
    bi.channels = a.shape().c();
  }
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  const std::size_t n = o.size();
  switch (op) {
    case BinaryOp::kAdd:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[bi(i)];
      break;
    case BinaryOp::kSub:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[bi(i)];
      break;
    case BinaryOp::kMul:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[bi(i)];
      break;
    case BinaryOp::kDiv:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] / y[bi(i)];
      check_finite(out, "div");
      break;
  }
  if (track(out, {&a, &b})) {
    record(out, [a, b, out, op, bi](std::span<const double> g) mutable {
      auto x = a.data();
      auto y = b.data();
      const std::size_t n = g.size();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          switch (op) {
            case BinaryOp::kAdd:
            case BinaryOp::kSub:
              ga[i] += g[i];
              break;
            case BinaryOp::kMul:
              ga[i] += g[i] * y[bi(i)];
              break;
            case BinaryOp::kDiv:
              ga[i] += g[i] / y[bi(i)];
              break;
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = bi(i);
          switch (op) {
            case BinaryOp::kAdd:
              gb[j] += g[i];
              break;
            case BinaryOp::kSub:
              gb[j] -= g[i];
              break;
            case BinaryOp::kMul:
              gb[j] += g[i] * x[i];
              break;
            case BinaryOp::kDiv:
              gb[j] -= g[i] * x[i] / (y[j] * y[j]);
              break;
          }
        }
      }
    });
  }
  return out;
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  const std::size_t n = o.size();
  switch (op) {
    case UnaryOp::kNeg:
      for (std::size_t i = 0; i < n; ++i) o[i] = -x[i];
      break;
    case UnaryOp::kAbs:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::fabs(x[i]);
      break;
    case UnaryOp::kExp:
      for (std::size_t i = 0; i < n; ++i) o[i] = std::exp(x[i]);
      check_finite(out, "exp");
      break;
    case UnaryOp::kLog:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x[i] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x[i]));
        o[i] = std::log(x[i]);
      }
      break;
    case UnaryOp::kSqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (x[i] < 0.0) throw DomainError("sqrt of negative value " + std::to_string(x[i]));
        o[i] = std::sqrt(x[i]);
      }
      break;
    case UnaryOp::kSquare:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * x[i];
      break;
  }
  if (track(out, {&a})) {
    record(out, [a, out, op](std::span<const double> g) mutable {
      auto x = a.data();
      auto y = out.data();
      auto ga = a.ensure_grad();
      const std::size_t n = g.size();
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case UnaryOp::kNeg:
            ga[i] -= g[i];
            break;
          case UnaryOp::kAbs:
            ga[i] += x[i] < 0.0 ? -g[i] : g[i];
            break;
          case UnaryOp::kExp:
            ga[i] += g[i] * y[i];
            break;
          case UnaryOp::kLog:
            ga[i] += g[i] / x[i];
            break;
          case UnaryOp::kSqrt:
            ga[i] += g[i] * 0.5 / y[i];
            break;
          case UnaryOp::kSquare:
            ga[i] += 2.0 * g[i] * x[i];
            break;
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (track(out, {&a})) {
    record(out, [a](std::span<const double> g) mutable {
      auto ga = a.ensure_grad();
      for (double& v : ga) v += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return mul(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("mse operands differ in shape");
  return mean(square(sub(a, b)));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.numel() != a.numel())
    throw ShapeError("reshape " + a.shape().str() + " to " + shape.str());
  Tensor out(shape, std::vector<double>(a.data().begin(), a.data().end()));
  if (track(out, {&a})) {
    record(out, [a](std::span<const double> g) mutable {
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

bool Adam::step() {
  for (const Tensor& p : params_)
    if (p.has_grad() && !all_finite(p.grad())) return false;
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
  return true;
}

double grad_norm(std::span<const Tensor> params) {
  double s = 0.0;
  for (const Tensor& p : params)
    if (p.has_grad())
      for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Tensor& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= scale;
  }
  return norm;
}

}  // namespace sapm
