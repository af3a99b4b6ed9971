#pragma once

// Swin-Transformer U-Net: conv embedding, a four-level windowed-attention
// encoder/decoder joined by pixel (un)shuffle and additive skips, and a conv
// restoration head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bfr/autodiff.hpp"
#include "bfr/image.hpp"
#include "json.hpp"

namespace bfr::stunet {

inline constexpr std::size_t kLevels = 4;

struct Config {
  std::size_t base_channels = 16;
  std::array<std::size_t, kLevels> stl_counts{4, 6, 6, 8};
  std::size_t window_size = 8;
  // 0 selects the default: level channels / 32, at least 1.
  std::array<std::size_t, kLevels> heads{0, 0, 0, 0};
  double mlp_ratio = 4.0;
  std::size_t image_channels = 3;
  std::size_t height = 128;
  std::size_t width = 128;

  /// Channels at level l (0-based): C * 2^l.
  std::size_t level_channels(std::size_t level) const { return base_channels << level; }
  std::size_t level_heads(std::size_t level) const;
  std::size_t level_hidden(std::size_t level) const;
  std::size_t shift() const { return window_size / 2; }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static Config from_json(const nlohmann::json& j);
};

/// One Swin Transformer layer. Linear weights are stored input-major (D x E).
struct LayerParams {
  ad::Tensor norm1_gamma, norm1_beta;
  ad::Tensor q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  ad::Tensor proj_weight, proj_bias;
  ad::Tensor bias_table;  // (2w-1)^2 x heads
  ad::Tensor norm2_gamma, norm2_beta;
  ad::Tensor fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

struct BlockParams {
  std::vector<LayerParams> layers;
};

struct Weights {
  Config config;
  ad::Tensor embed_weight, embed_bias;      // C x C_I x 3 x 3
  std::array<BlockParams, kLevels> encoder;  // levels 1..4
  // Pointwise projections after pixel-unshuffle (4 C_l -> C_{l+1}) and after
  // pixel-shuffle (C_{l+1} / 4 -> C_l), indexed by the upper level l.
  std::array<ad::Tensor, kLevels - 1> down_weight, down_bias;
  std::array<ad::Tensor, kLevels - 1> up_weight, up_bias;
  std::array<BlockParams, kLevels - 1> decoder;  // levels 1..3
  ad::Tensor restore_weight, restore_bias;   // C_I x C x 3 x 3

  /// All learnable tensors in checkpoint order (handles share storage).
  std::vector<ad::Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t scalar_count() const;
  /// FNV-1a over the little-endian bytes of every parameter, in order.
  std::uint64_t checksum() const;
  void zero_grad();
};

/// Deterministic initialization: truncated normal (std 0.02, cut at 2 std)
/// for conv and linear weights, zeros for biases and position tables,
/// ones/zeros for layer norm.
Weights build(const Config& config, std::uint64_t seed);

/// Named feature shapes (N x H x W x C) captured during forward.
struct ShapeProbe {
  std::vector<std::pair<std::string, ad::Shape>> features;
  std::optional<ad::Shape> find(const std::string& name) const;
  // Number of layers executed per block, in execution order.
  std::vector<std::pair<std::string, std::size_t>> block_layers;
};

/// Additive 0 / -inf mask (windows x T x T) for a cyclically shifted grid.
std::vector<double> shift_mask(std::size_t height, std::size_t width, std::size_t window,
                               std::size_t shift);

struct AttentionTrace {
  ad::Tensor weights;  // (B * heads) x T x T softmax output
};

/// Multi-head attention inside windows: x is B x T x C with T = w^2.
ad::Tensor window_attention(const ad::Tensor& x, const LayerParams& p, std::size_t heads,
                            std::size_t window, std::span<const double> mask,
                            std::size_t mask_windows, AttentionTrace* trace = nullptr);

/// One layer on an N x H x W x C feature map.
ad::Tensor stl_forward(const ad::Tensor& x, const LayerParams& p, std::size_t heads,
                       std::size_t window, bool shifted);

/// Layers alternate unshifted / shifted, starting unshifted.
ad::Tensor stb_forward(const ad::Tensor& x, const BlockParams& block, std::size_t heads,
                       std::size_t window, ShapeProbe* probe = nullptr,
                       const std::string& name = {});

/// input: N x C_I x H x W in [0, 1]; returns the same shape.
ad::Tensor forward(const Weights& weights, const ad::Tensor& input, ShapeProbe* probe = nullptr);

/// Forward without recording, clamped to [0, 1].
ImageTensor restore(const Weights& weights, const ImageTensor& lq);
std::vector<ImageTensor> restore(const Weights& weights, std::span<const ImageTensor> lq);

ad::Tensor to_batch(std::span<const ImageTensor> images);
std::vector<ImageTensor> from_batch(const ad::Tensor& batch, ImageRole role);

// ---- training ---------------------------------------------------------------

/// SGD with optional heavy-ball momentum (off by default).
class Sgd {
 public:
  explicit Sgd(double lr, double momentum = 0.0);
  void step(std::span<ad::Tensor> params);
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

/// One mean-L1 step: forward, backward, update. Returns the pre-update loss.
double train_step(Weights& weights, const ad::Tensor& lq, const ad::Tensor& gt, Sgd& optimizer);
double train_step(Weights& weights, const ad::Tensor& lq, const ad::Tensor& gt, double lr);

}  // namespace bfr::stunet
