#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "bfr/image.hpp"

namespace bfr::jpeg {

enum class Subsampling { k444, k420 };

using Block = std::array<double, 64>;
using QuantTable = std::array<std::uint16_t, 64>;

/// Annex K base tables in row-major (not zigzag) order.
extern const QuantTable kLumaBase;
extern const QuantTable kChromaBase;

/// Standard IJG quality scaling: q < 50 -> 5000 / q, else 200 - 2q; entries
/// clamped to [1, 255].
QuantTable scaled_table(const QuantTable& base, int quality);

/// Orthonormal 8x8 DCT-II and its inverse (separable, table-driven).
Block forward_dct(const Block& pixels);
Block inverse_dct(const Block& coeffs);

/// Lossy path of a baseline JPEG encode/decode without entropy coding:
/// BT.601 full-range YCbCr, optional 4:2:0, DCT, quantize, dequantize,
/// inverse DCT, back to RGB, clamp.
ImageTensor roundtrip(const ImageTensor& img, int quality, Subsampling subsampling = Subsampling::k444);

}  // namespace bfr::jpeg
