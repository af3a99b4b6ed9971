#include "bfr/jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "bfr/error.hpp"

namespace bfr::jpeg {

const QuantTable kLumaBase = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

const QuantTable kChromaBase = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

QuantTable scaled_table(const QuantTable& base, int quality) {
  if (quality < 1 || quality > 100)
    throw ParameterError("jpeg quality must be in [1, 100], got " + std::to_string(quality));
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTable out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const int v = (base[i] * scale + 50) / 100;
    out[i] = static_cast<std::uint16_t>(std::clamp(v, 1, 255));
  }
  return out;
}

namespace {

// basis[u][x] = c(u) cos((2x + 1) u pi / 16), c(0) = sqrt(1/8), else 1/2
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto table = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(0.125) : 0.5;
      for (int x = 0; x < 8; ++x) b[u][x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return table;
}

}  // namespace

Block forward_dct(const Block& p) {
  const auto& b = dct_basis();
  Block tmp{}, out{};
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += b[u][x] * p[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += b[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
  return out;
}

Block inverse_dct(const Block& c) {
  const auto& b = dct_basis();
  Block tmp{}, out{};
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += b[u][x] * c[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += b[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
  return out;
}

namespace {

struct Plane {
  std::size_t width, height;
  std::vector<double> data;
};

// Quantizes every 8x8 block of a level-shifted plane; edges are padded by
// replicating the last row/column, as encoders do.
void code_plane(Plane& plane, const QuantTable& q) {
  const std::size_t bw = (plane.width + 7) / 8, bh = (plane.height + 7) / 8;
  for (std::size_t by = 0; by < bh; ++by)
    for (std::size_t bx = 0; bx < bw; ++bx) {
      Block blk{};
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t sy = std::min(by * 8 + y, plane.height - 1);
          const std::size_t sx = std::min(bx * 8 + x, plane.width - 1);
          blk[y * 8 + x] = plane.data[sy * plane.width + sx] - 128.0;
        }
      Block coef = forward_dct(blk);
      for (std::size_t i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
      const Block rec = inverse_dct(coef);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t sy = by * 8 + y, sx = bx * 8 + x;
          if (sy < plane.height && sx < plane.width) plane.data[sy * plane.width + sx] = rec[y * 8 + x] + 128.0;
        }
    }
}

Plane decimate(const Plane& p) {
  Plane out{(p.width + 1) / 2, (p.height + 1) / 2, {}};
  out.data.resize(out.width * out.height);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const std::size_t sy = std::min(2 * y + dy, p.height - 1), sx = std::min(2 * x + dx, p.width - 1);
          s += p.data[sy * p.width + sx];
        }
      out.data[y * out.width + x] = 0.25 * s;
    }
  return out;
}

Plane replicate(const Plane& p, std::size_t width, std::size_t height) {
  Plane out{width, height, std::vector<double>(width * height)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.data[y * width + x] = p.data[(y / 2) * p.width + x / 2];
  return out;
}

}  // namespace

ImageTensor roundtrip(const ImageTensor& img, int quality, Subsampling subsampling) {
  if (img.channels != 3) throw DimensionError("jpeg roundtrip: expected RGB input");
  const QuantTable ql = scaled_table(kLumaBase, quality);
  const QuantTable qc = scaled_table(kChromaBase, quality);
  const std::size_t W = img.width, H = img.height, n = W * H;
  Plane Y{W, H, std::vector<double>(n)}, Cb{W, H, std::vector<double>(n)}, Cr{W, H, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.data[i * 3] * 255.0, g = img.data[i * 3 + 1] * 255.0, b = img.data[i * 3 + 2] * 255.0;
    Y.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    Cb.data[i] = -0.168735892 * r - 0.331264108 * g + 0.5 * b + 128.0;
    Cr.data[i] = 0.5 * r - 0.418687589 * g - 0.081312411 * b + 128.0;
  }
  code_plane(Y, ql);
  if (subsampling == Subsampling::k420) {
    Plane cb = decimate(Cb), cr = decimate(Cr);
    code_plane(cb, qc);
    code_plane(cr, qc);
    Cb = replicate(cb, W, H);
    Cr = replicate(cr, W, H);
  } else {
    code_plane(Cb, qc);
    code_plane(Cr, qc);
  }
  ImageTensor out(W, H, 3);
  out.role = ImageRole::LQ;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = Y.data[i], cb = Cb.data[i] - 128.0, cr = Cr.data[i] - 128.0;
    out.data[i * 3] = (y + 1.402 * cr) / 255.0;
    out.data[i * 3 + 1] = (y - 0.344136286 * cb - 0.714136286 * cr) / 255.0;
    out.data[i * 3 + 2] = (y + 1.772 * cb) / 255.0;
  }
  out.clamp();
  return out;
}

}  // namespace bfr::jpeg
