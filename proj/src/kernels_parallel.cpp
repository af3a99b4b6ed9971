#include "bfr/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bfr::kernels {

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

namespace {
using idx = std::ptrdiff_t;

// Output columns ox in [lo, hi) for which ox + off lands inside [0, W).
inline void valid_range(idx off, idx W, idx OW, idx& lo, idx& hi) {
  lo = std::max<idx>(0, -off);
  hi = std::min<idx>(OW, W - off);
}
}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const idx H = d.height, W = d.width, K = d.kernel, P = d.pad;
  const idx OH = d.out_height(), OW = d.out_width();
  const idx C = d.in_channels, O = d.out_channels;
  const idx planes = static_cast<idx>(d.batch) * O;
#pragma omp parallel for schedule(static)
  for (idx no = 0; no < planes; ++no) {
    const idx n = no / O, o = no % O;
    double* dst = out.data() + no * OH * OW;
    std::fill(dst, dst + OH * OW, bias[o]);
    for (idx c = 0; c < C; ++c) {
      const double* src = in.data() + (n * C + c) * H * W;
      const double* wk = w.data() + (o * C + c) * K * K;
      for (idx ky = 0; ky < K; ++ky)
        for (idx kx = 0; kx < K; ++kx) {
          const double wv = wk[ky * K + kx];
          idx lo, hi;
          valid_range(kx - P, W, OW, lo, hi);
          for (idx oy = 0; oy < OH; ++oy) {
            const idx iy = oy + ky - P;
            if (iy < 0 || iy >= H) continue;
            double* row = dst + oy * OW;
            const idx base = iy * W + kx - P;
            for (idx ox = lo; ox < hi; ++ox) row[ox] += wv * src[base + ox];
          }
        }
    }
  }
}

// Element order matches the serial reference: for each input sample the terms
// are summed over (o, ky, kx) ascending.
void conv2d_backward_input(const ConvDims& d, std::span<const double> dout,
                           std::span<const double> w, std::span<double> din) {
  const idx H = d.height, W = d.width, K = d.kernel, P = d.pad;
  const idx OH = d.out_height(), OW = d.out_width();
  const idx C = d.in_channels, O = d.out_channels;
  const idx planes = static_cast<idx>(d.batch) * C;
#pragma omp parallel for schedule(static)
  for (idx nc = 0; nc < planes; ++nc) {
    const idx n = nc / C, c = nc % C;
    double* dst = din.data() + nc * H * W;
    std::fill(dst, dst + H * W, 0.0);
    for (idx o = 0; o < O; ++o) {
      const double* g = dout.data() + (n * O + o) * OH * OW;
      const double* wk = w.data() + (o * C + c) * K * K;
      for (idx ky = 0; ky < K; ++ky)
        for (idx kx = 0; kx < K; ++kx) {
          const double wv = wk[ky * K + kx];
          const idx off = P - kx;  // ox = ix + off
          const idx lo = std::max<idx>(0, -off), hi = std::min<idx>(W, OW - off);
          for (idx iy = 0; iy < H; ++iy) {
            const idx oy = iy - ky + P;
            if (oy < 0 || oy >= OH) continue;
            double* row = dst + iy * W;
            const idx base = oy * OW + off;
            for (idx ix = lo; ix < hi; ++ix) row[ix] += g[base + ix] * wv;
          }
        }
    }
  }
}

void conv2d_backward_weight(const ConvDims& d, std::span<const double> dout,
                            std::span<const double> in, std::span<double> dw,
                            std::span<double> dbias) {
  const idx H = d.height, W = d.width, K = d.kernel, P = d.pad;
  const idx OH = d.out_height(), OW = d.out_width();
  const idx C = d.in_channels, O = d.out_channels, N = d.batch;
#pragma omp parallel for schedule(static)
  for (idx o = 0; o < O; ++o) {
    double sb = 0.0;
    for (idx n = 0; n < N; ++n) {
      const double* g = dout.data() + (n * O + o) * OH * OW;
      for (idx i = 0; i < OH * OW; ++i) sb += g[i];
    }
    dbias[o] = sb;
    for (idx c = 0; c < C; ++c)
      for (idx ky = 0; ky < K; ++ky)
        for (idx kx = 0; kx < K; ++kx) {
          idx lo, hi;
          valid_range(kx - P, W, OW, lo, hi);
          double s = 0.0;
          for (idx n = 0; n < N; ++n) {
            const double* g = dout.data() + (n * O + o) * OH * OW;
            const double* src = in.data() + (n * C + c) * H * W;
            for (idx oy = 0; oy < OH; ++oy) {
              const idx iy = oy + ky - P;
              if (iy < 0 || iy >= H) continue;
              const double* grow = g + oy * OW;
              const idx base = iy * W + kx - P;
              for (idx ox = lo; ox < hi; ++ox) s += grow[ox] * src[base + ox];
            }
          }
          dw[((o * C + c) * K + ky) * K + kx] = s;
        }
  }
}

void matmul_forward(const MatmulDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const idx M = d.rows, D = d.inner, E = d.cols;
#pragma omp parallel for schedule(static)
  for (idx m = 0; m < M; ++m) {
    double* row = y.data() + m * E;
    if (bias.empty())
      std::fill(row, row + E, 0.0);
    else
      std::copy(bias.begin(), bias.end(), row);
    const double* xr = x.data() + m * D;
    for (idx k = 0; k < D; ++k) {
      const double xv = xr[k];
      const double* wr = w.data() + k * E;
      for (idx e = 0; e < E; ++e) row[e] += xv * wr[e];
    }
  }
}

void matmul_backward_input(const MatmulDims& d, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  const idx M = d.rows, D = d.inner, E = d.cols;
#pragma omp parallel for schedule(static)
  for (idx m = 0; m < M; ++m) {
    const double* g = dy.data() + m * E;
    for (idx k = 0; k < D; ++k) {
      const double* wr = w.data() + k * E;
      double s = 0.0;
      for (idx e = 0; e < E; ++e) s += g[e] * wr[e];
      dx[m * D + k] = s;
    }
  }
}

void matmul_backward_weight(const MatmulDims& d, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            std::span<double> dbias) {
  const idx M = d.rows, D = d.inner, E = d.cols;
#pragma omp parallel for schedule(static)
  for (idx k = 0; k < D; ++k) {
    double* row = dw.data() + k * E;
    std::fill(row, row + E, 0.0);
    for (idx m = 0; m < M; ++m) {
      const double xv = x[m * D + k];
      const double* g = dy.data() + m * E;
      for (idx e = 0; e < E; ++e) row[e] += xv * g[e];
    }
  }
  if (!dbias.empty()) {
    std::fill(dbias.begin(), dbias.end(), 0.0);
    for (idx m = 0; m < M; ++m)
      for (idx e = 0; e < E; ++e) dbias[e] += dy[m * E + e];
  }
}

void bmm(const BmmDims& d, std::span<const double> a, std::span<const double> b,
         std::span<double> c) {
  const idx B = d.batch, M = d.m, K = d.k, N = d.n;
  const idx sa = M * K, sb = K * N, sc = M * N;
  const idx tasks = B * M;
#pragma omp parallel for schedule(static)
  for (idx t = 0; t < tasks; ++t) {
    const idx p = t / M, i = t % M;
    double* row = c.data() + p * sc + i * N;
    const double* A = a.data() + p * sa;
    const double* Bm = b.data() + p * sb;
    if (d.trans_b) {
      for (idx j = 0; j < N; ++j) {
        double s = 0.0;
        for (idx q = 0; q < K; ++q) s += (d.trans_a ? A[q * M + i] : A[i * K + q]) * Bm[j * K + q];
        row[j] = s;
      }
    } else {
      std::fill(row, row + N, 0.0);
      for (idx q = 0; q < K; ++q) {
        const double av = d.trans_a ? A[q * M + i] : A[i * K + q];
        const double* br = Bm + q * N;
        for (idx j = 0; j < N; ++j) row[j] += av * br[j];
      }
    }
  }
}

void filter_separable(std::size_t height, std::size_t width, std::span<const double> src,
                      std::span<const double> kx, std::span<const double> ky,
                      std::span<double> dst) {
  const idx H = height, W = width;
  const idx KX = kx.size(), KY = ky.size(), rx = KX / 2, ry = KY / 2;
  std::vector<double> tmp(height * width);
#pragma omp parallel for schedule(static)
  for (idx y = 0; y < H; ++y) {
    const double* s = src.data() + y * W;
    for (idx x = 0; x < W; ++x) {
      double acc = 0.0;
      if (x >= rx && x + KX - rx <= W) {
        const double* p = s + x - rx;
        for (idx t = 0; t < KX; ++t) acc += kx[t] * p[t];
      } else {
        for (idx t = 0; t < KX; ++t) acc += kx[t] * s[reflect_index(x + t - rx, W)];
      }
      tmp[y * W + x] = acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (idx y = 0; y < H; ++y) {
    double* row = dst.data() + y * W;
    std::fill(row, row + W, 0.0);
    for (idx t = 0; t < KY; ++t) {
      const double kv = ky[t];
      const double* trow = tmp.data() + reflect_index(y + t - ry, H) * W;
      for (idx x = 0; x < W; ++x) row[x] += kv * trow[x];
    }
  }
}

void filter_separable_valid(std::size_t height, std::size_t width, std::span<const double> src,
                            std::span<const double> kernel, std::span<double> dst) {
  const idx H = height, W = width, K = kernel.size();
  const idx OH = H - K + 1, OW = W - K + 1;
  std::vector<double> tmp(height * OW);
#pragma omp parallel for schedule(static)
  for (idx y = 0; y < H; ++y) {
    const double* s = src.data() + y * W;
    for (idx x = 0; x < OW; ++x) {
      double acc = 0.0;
      for (idx t = 0; t < K; ++t) acc += kernel[t] * s[x + t];
      tmp[y * OW + x] = acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (idx y = 0; y < OH; ++y) {
    double* row = dst.data() + y * OW;
    std::fill(row, row + OW, 0.0);
    for (idx t = 0; t < K; ++t) {
      const double kv = kernel[t];
      const double* trow = tmp.data() + (y + t) * OW;
      for (idx x = 0; x < OW; ++x) row[x] += kv * trow[x];
    }
  }
}

void filter2d(std::size_t height, std::size_t width, std::span<const double> src,
              std::size_t ksize, std::span<const double> kernel, std::span<double> dst) {
  const idx H = height, W = width, K = ksize, r = K / 2;
  std::vector<idx> xmap(W * K);
  for (idx x = 0; x < W; ++x)
    for (idx kx = 0; kx < K; ++kx) xmap[kx * W + x] = reflect_index(x + kx - r, W);
#pragma omp parallel for schedule(static)
  for (idx y = 0; y < H; ++y) {
    double* row = dst.data() + y * W;
    std::fill(row, row + W, 0.0);
    for (idx ky = 0; ky < K; ++ky) {
      const double* srow = src.data() + reflect_index(y + ky - r, H) * W;
      for (idx kx = 0; kx < K; ++kx) {
        const double kv = kernel[ky * K + kx];
        const idx* xm = xmap.data() + kx * W;
        for (idx x = 0; x < W; ++x) row[x] += kv * srow[xm[x]];
      }
    }
  }
}

}  // namespace parallel
}  // namespace bfr::kernels
