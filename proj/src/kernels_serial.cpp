#include "bfr/kernels.hpp"

#include <vector>

namespace bfr::kernels::serial {

namespace {
using idx = std::ptrdiff_t;
}

void conv2d_forward(const ConvDims& d, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const idx H = d.height, W = d.width, K = d.kernel, P = d.pad;
  const idx OH = d.out_height(), OW = d.out_width();
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (idx oy = 0; oy < OH; ++oy)
        for (idx ox = 0; ox < OW; ++ox) {
          double s = bias[o];
          for (std::size_t c = 0; c < d.in_channels; ++c)
            for (idx ky = 0; ky < K; ++ky) {
              const idx iy = oy + ky - P;
              if (iy < 0 || iy >= H) continue;
              for (idx kx = 0; kx < K; ++kx) {
                const idx ix = ox + kx - P;
                if (ix < 0 || ix >= W) continue;
                s += w[((o * d.in_channels + c) * K + ky) * K + kx] *
                     in[((n * d.in_channels + c) * H + iy) * W + ix];
              }
            }
          out[((n * d.out_channels + o) * OH + oy) * OW + ox] = s;
        }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> dout,
                           std::span<const double> w, std::span<double> din) {
  const idx H = d.height, W = d.width, K = d.kernel, P = d.pad;
  const idx OH = d.out_height(), OW = d.out_width();
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t c = 0; c < d.in_channels; ++c)
      for (idx iy = 0; iy < H; ++iy)
        for (idx ix = 0; ix < W; ++ix) {
          double s = 0.0;
          for (std::size_t o = 0; o < d.out_channels; ++o)
            for (idx ky = 0; ky < K; ++ky) {
              const idx oy = iy - ky + P;
              if (oy < 0 || oy >= OH) continue;
              for (idx kx = 0; kx < K; ++kx) {
                const idx ox = ix - kx + P;
                if (ox < 0 || ox >= OW) continue;
                s += dout[((n * d.out_channels + o) * OH + oy) * OW + ox] *
                     w[((o * d.in_channels + c) * K + ky) * K + kx];
              }
            }
          din[((n * d.in_channels + c) * H + iy) * W + ix] = s;
        }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> dout,
                            std::span<const double> in, std::span<double> dw,
                            std::span<double> dbias) {
  const idx H = d.height, W = d.width, K = d.kernel, P = d.pad;
  const idx OH = d.out_height(), OW = d.out_width();
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    double sb = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n)
      for (idx oy = 0; oy < OH; ++oy)
        for (idx ox = 0; ox < OW; ++ox) sb += dout[((n * d.out_channels + o) * OH + oy) * OW + ox];
    dbias[o] = sb;
    for (std::size_t c = 0; c < d.in_channels; ++c)
      for (idx ky = 0; ky < K; ++ky)
        for (idx kx = 0; kx < K; ++kx) {
          double s = 0.0;
          for (std::size_t n = 0; n < d.batch; ++n)
            for (idx oy = 0; oy < OH; ++oy) {
              const idx iy = oy + ky - P;
              if (iy < 0 || iy >= H) continue;
              for (idx ox = 0; ox < OW; ++ox) {
                const idx ix = ox + kx - P;
                if (ix < 0 || ix >= W) continue;
                s += dout[((n * d.out_channels + o) * OH + oy) * OW + ox] *
                     in[((n * d.in_channels + c) * H + iy) * W + ix];
              }
            }
          dw[((o * d.in_channels + c) * K + ky) * K + kx] = s;
        }
  }
}

void matmul_forward(const MatmulDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  for (std::size_t m = 0; m < d.rows; ++m)
    for (std::size_t e = 0; e < d.cols; ++e) {
      double s = bias.empty() ? 0.0 : bias[e];
      for (std::size_t k = 0; k < d.inner; ++k) s += x[m * d.inner + k] * w[k * d.cols + e];
      y[m * d.cols + e] = s;
    }
}

void matmul_backward_input(const MatmulDims& d, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  for (std::size_t m = 0; m < d.rows; ++m)
    for (std::size_t k = 0; k < d.inner; ++k) {
      double s = 0.0;
      for (std::size_t e = 0; e < d.cols; ++e) s += dy[m * d.cols + e] * w[k * d.cols + e];
      dx[m * d.inner + k] = s;
    }
}

void matmul_backward_weight(const MatmulDims& d, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            std::span<double> dbias) {
  for (std::size_t k = 0; k < d.inner; ++k)
    for (std::size_t e = 0; e < d.cols; ++e) {
      double s = 0.0;
      for (std::size_t m = 0; m < d.rows; ++m) s += x[m * d.inner + k] * dy[m * d.cols + e];
      dw[k * d.cols + e] = s;
    }
  if (!dbias.empty())
    for (std::size_t e = 0; e < d.cols; ++e) {
      double s = 0.0;
      for (std::size_t m = 0; m < d.rows; ++m) s += dy[m * d.cols + e];
      dbias[e] = s;
    }
}

void bmm(const BmmDims& d, std::span<const double> a, std::span<const double> b,
         std::span<double> c) {
  const std::size_t sa = d.m * d.k, sb = d.k * d.n, sc = d.m * d.n;
  for (std::size_t p = 0; p < d.batch; ++p)
    for (std::size_t i = 0; i < d.m; ++i)
      for (std::size_t j = 0; j < d.n; ++j) {
        double s = 0.0;
        for (std::size_t q = 0; q < d.k; ++q) {
          const double av = d.trans_a ? a[p * sa + q * d.m + i] : a[p * sa + i * d.k + q];
          const double bv = d.trans_b ? b[p * sb + j * d.k + q] : b[p * sb + q * d.n + j];
          s += av * bv;
        }
        c[p * sc + i * d.n + j] = s;
      }
}

void filter_separable(std::size_t height, std::size_t width, std::span<const double> src,
                      std::span<const double> kx, std::span<const double> ky,
                      std::span<double> dst) {
  const idx H = height, W = width;
  const idx rx = static_cast<idx>(kx.size()) / 2, ry = static_cast<idx>(ky.size()) / 2;
  std::vector<double> tmp(height * width);
  for (idx y = 0; y < H; ++y)
    for (idx x = 0; x < W; ++x) {
      double s = 0.0;
      for (idx t = 0; t < static_cast<idx>(kx.size()); ++t)
        s += kx[t] * src[y * W + reflect_index(x + t - rx, W)];
      tmp[y * W + x] = s;
    }
  for (idx y = 0; y < H; ++y)
    for (idx x = 0; x < W; ++x) {
      double s = 0.0;
      for (idx t = 0; t < static_cast<idx>(ky.size()); ++t)
        s += ky[t] * tmp[reflect_index(y + t - ry, H) * W + x];
      dst[y * W + x] = s;
    }
}

void filter_separable_valid(std::size_t height, std::size_t width, std::span<const double> src,
                            std::span<const double> kernel, std::span<double> dst) {
  const std::size_t k = kernel.size();
  const std::size_t oh = height - k + 1, ow = width - k + 1;
  std::vector<double> tmp(height * ow);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += kernel[t] * src[y * width + x + t];
      tmp[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += kernel[t] * tmp[(y + t) * ow + x];
      dst[y * ow + x] = s;
    }
}

void filter2d(std::size_t height, std::size_t width, std::span<const double> src,
              std::size_t ksize, std::span<const double> kernel, std::span<double> dst) {
  const idx H = height, W = width, K = ksize, r = K / 2;
  for (idx y = 0; y < H; ++y)
    for (idx x = 0; x < W; ++x) {
      double s = 0.0;
      for (idx ky = 0; ky < K; ++ky) {
        const idx sy = reflect_index(y + ky - r, H);
        for (idx kx = 0; kx < K; ++kx) s += kernel[ky * K + kx] * src[sy * W + reflect_index(x + kx - r, W)];
      }
      dst[y * W + x] = s;
    }
}

}  // namespace bfr::kernels::serial
