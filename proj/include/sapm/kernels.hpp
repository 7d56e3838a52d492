#pragma once

// Raw NCHW compute kernels behind the differentiable layer operations.
//
// Two implementations share every signature:
//   sapm::kernels            im2col + GEMM / blocked loops, OpenMP over the
//                            batch. Each image is computed by one thread and
//                            per-image weight-gradient partials are summed in
//                            batch order, so results never depend on the
//                            thread count.
//   sapm::kernels::reference plain nested loops in textbook order, serial.
//                            Kept for testing and benchmarking only.
//
// Forward kernels overwrite their output; backward kernels accumulate (+=).
// Zero padding applies to both convolution and adder kernels; for the adder
// a padded tap contributes |0 - f|.

#include <cstddef>
#include <span>

namespace sapm::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t cin = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t cout = 1;
  std::size_t k = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t hout() const { return (h + 2 * pad - k) / stride + 1; }
  std::size_t wout() const { return (w + 2 * pad - k) / stride + 1; }
  std::size_t patch() const { return cin * k * k; }
  std::size_t in_size() const { return batch * cin * h * w; }
  std::size_t out_size() const { return batch * cout * hout() * wout(); }
  std::size_t weight_size() const { return cout * patch(); }
  // Throws ShapeError when the window does not fit the padded input.
  void validate() const;
};

void im2col(const ConvGeometry& g, const double* image, double* col);
// Accumulates columns back into the image they were taken from.
void col2im(const ConvGeometry& g, const double* col, double* image);

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<double> y);
void conv_backward_input(const ConvGeometry& g, std::span<const double> gy,
                         std::span<const double> w, std::span<double> gx);
void conv_backward_weight(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> gy, std::span<double> gw);

// y = -sum |x - f| over each receptive field.
void adder_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> f,
                   std::span<double> y);
// Surrogate input gradient: gy contracted with clip(f - x, -1, 1).
void adder_backward_input(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> f, std::span<const double> gy,
                          std::span<double> gx);
// Surrogate filter gradient: gy contracted with (x - f).
void adder_backward_filter(const ConvGeometry& g, std::span<const double> x,
                           std::span<const double> f, std::span<const double> gy,
                           std::span<double> gf);

namespace reference {

void conv_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                  std::span<double> y);
void conv_backward_input(const ConvGeometry& g, std::span<const double> gy,
                         std::span<const double> w, std::span<double> gx);
void conv_backward_weight(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> gy, std::span<double> gw);
void adder_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> f,
                   std::span<double> y);
void adder_backward_input(const ConvGeometry& g, std::span<const double> x,
                          std::span<const double> f, std::span<const double> gy,
                          std::span<double> gx);
void adder_backward_filter(const ConvGeometry& g, std::span<const double> x,
                           std::span<const double> f, std::span<const double> gy,
                           std::span<double> gf);

}  // namespace reference
}  // namespace sapm::kernels
