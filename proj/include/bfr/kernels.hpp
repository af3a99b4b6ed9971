#pragma once

// Numeric inner loops. Every kernel has a straightforward serial reference
// and an OpenMP version. The two visit each output element's terms in the
// same order, so their results are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace bfr::kernels {

struct ConvDims {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return height + 2 * pad - kernel + 1; }
  std::size_t out_width() const { return width + 2 * pad - kernel + 1; }
};

// y[m, e] = bias[e] + sum_d x[m, d] * w[d, e]
struct MatmulDims {
  std::size_t rows = 1;   // m
  std::size_t inner = 1;  // d
  std::size_t cols = 1;   // e
};

// c[b] = op(a[b]) * op(b[b]); op transposes when the flag is set.
struct BmmDims {
  std::size_t batch = 1;
  std::size_t m = 1;
  std::size_t k = 1;
  std::size_t n = 1;
  bool trans_a = false;
  bool trans_b = false;
};

/// Index into [0, n) mirroring about the edge samples (…c b | a b c | b a…).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

#define BFR_KERNEL_DECLS                                                                         \
  void conv2d_forward(const ConvDims& d, std::span<const double> in, std::span<const double> w, \
                      std::span<const double> bias, std::span<double> out);                    \
  void conv2d_backward_input(const ConvDims& d, std::span<const double> dout,                   \
                             std::span<const double> w, std::span<double> din);                 \
  void conv2d_backward_weight(const ConvDims& d, std::span<const double> dout,                  \
                              std::span<const double> in, std::span<double> dw,                 \
                              std::span<double> dbias);                                         \
  void matmul_forward(const MatmulDims& d, std::span<const double> x, std::span<const double> w, \
                      std::span<const double> bias, std::span<double> y);                       \
  void matmul_backward_input(const MatmulDims& d, std::span<const double> dy,                   \
                             std::span<const double> w, std::span<double> dx);                  \
  void matmul_backward_weight(const MatmulDims& d, std::span<const double> dy,                  \
                              std::span<const double> x, std::span<double> dw,                  \
                              std::span<double> dbias);                                         \
  void bmm(const BmmDims& d, std::span<const double> a, std::span<const double> b,             \
           std::span<double> c);                                                                \
  void filter_separable(std::size_t height, std::size_t width, std::span<const double> src,     \
                        std::span<const double> kx, std::span<const double> ky,                 \
                        std::span<double> dst);                                                 \
  void filter_separable_valid(std::size_t height, std::size_t width,                            \
                              std::span<const double> src, std::span<const double> kernel,     \
                              std::span<double> dst);                                           \
  void filter2d(std::size_t height, std::size_t width, std::span<const double> src,             \
                std::size_t ksize, std::span<const double> kernel, std::span<double> dst);

// Separable filters use odd-length taps centred on the output sample and
// reflect borders (filter_separable, filter2d). filter_separable_valid keeps
// only fully-supported outputs: (h - k + 1) x (w - k + 1).
namespace serial {
BFR_KERNEL_DECLS
}
namespace parallel {
BFR_KERNEL_DECLS
}

#undef BFR_KERNEL_DECLS

using parallel::bmm;
using parallel::conv2d_backward_input;
using parallel::conv2d_backward_weight;
using parallel::conv2d_forward;
using parallel::filter2d;
using parallel::filter_separable;
using parallel::filter_separable_valid;
using parallel::matmul_backward_input;
using parallel::matmul_backward_weight;
using parallel::matmul_forward;

/// Sets the OpenMP team size used by the parallel kernels (<= 0 keeps default).
void set_num_threads(int threads);
int num_threads();

}  // namespace bfr::kernels
