#pragma once

// Dense NCHW tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage. Operations in
// this library append a record to the thread's active Tape (see TapeScope)
// whenever one of their inputs requires a gradient; backward() then walks the
// records once, in reverse, accumulating into every tensor that asked for a
// gradient.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sapm/aligned.hpp"

namespace sapm {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return ext_[i]; }
  std::size_t numel() const;

  // NCHW accessors; only meaningful for rank-4 shapes.
  std::size_t n() const { return ext_[0]; }
  std::size_t c() const { return ext_[1]; }
  std::size_t h() const { return ext_[2]; }
  std::size_t w() const { return ext_[3]; }

  bool operator==(const Shape& other) const;
  std::string str() const;

 private:
  std::array<std::size_t, kMaxRank> ext_{};
  std::size_t rank_ = 0;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;
  // Allocates a zero gradient buffer on first use.
  std::span<double> ensure_grad() const;
  void zero_grad() const;

  // Deep copy of the values; the copy does not track gradients.
  Tensor detach() const;
  // Same storage identity.
  bool is(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of executed differentiable operations.
class Tape {
 public:
  // Receives the output gradient and accumulates into the inputs' gradients.
  using BackwardFn = std::function<void(std::span<const double>)>;

  void record(Tensor output, BackwardFn backward);
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }

  // Seeds output's gradient with `seed` and runs every record in reverse.
  void backward(Tensor output, const Tensor& seed);
  // Scalar outputs only: seed 1.
  void backward(Tensor output);

 private:
  struct Record {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

// Installs a tape as the thread's active tape for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Returns true (and marks `output` as requiring grad) when any input requires
// a gradient and a tape is active; the caller then records its backward rule.
bool track(Tensor& output, std::initializer_list<const Tensor*> inputs);
void record(const Tensor& output, Tape::BackwardFn backward);

// ---------------------------------------------------------------------------
// Elementwise operations. `b` may have the same shape as `a`, be a scalar
// (one element), or hold one value per channel of a rank-4 `a`.

enum class BinaryOp { kAdd, kSub, kMul, kDiv };
enum class UnaryOp { kNeg, kAbs, kExp, kLog, kSqrt, kSquare };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryOp op, const Tensor& a);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kMul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::kDiv, a, b); }
inline Tensor neg(const Tensor& a) { return elementwise(UnaryOp::kNeg, a); }
inline Tensor abs(const Tensor& a) { return elementwise(UnaryOp::kAbs, a); }
inline Tensor exp(const Tensor& a) { return elementwise(UnaryOp::kExp, a); }
inline Tensor log(const Tensor& a) { return elementwise(UnaryOp::kLog, a); }
inline Tensor sqrt(const Tensor& a) { return elementwise(UnaryOp::kSqrt, a); }
inline Tensor square(const Tensor& a) { return elementwise(UnaryOp::kSquare, a); }

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);

// Same values, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // Applies one update from the parameters' current gradients. Returns false,
  // leaving parameters and moments untouched, if any gradient is non-finite.
  [[nodiscard]] bool step();

  void set_lr(double lr) { options_.lr = lr; }
  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

// Global L2 norm over the gradients of `params` (absent gradients count 0).
double grad_norm(std::span<const Tensor> params);
// Scales all gradients so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

bool all_finite(std::span<const double> values);

}  // namespace sapm
