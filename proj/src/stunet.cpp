#include "bfr/stunet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "bfr/error.hpp"
#include "bfr/rng.hpp"

namespace bfr::stunet {

using ad::Tensor;

// ---- config -----------------------------------------------------------------

std::size_t Config::level_heads(std::size_t level) const {
  if (heads[level] != 0) return heads[level];
  return std::max<std::size_t>(1, level_channels(level) / 32);
}

std::size_t Config::level_hidden(std::size_t level) const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mlp_ratio * level_channels(level))));
}

void Config::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid STUNet config: " + what); };
  if (base_channels == 0 || base_channels % 2 != 0)
    fail("base_channels must be a positive even number (pixel-shuffle needs C_2 divisible by 4)");
  if (window_size == 0) fail("window_size must be positive");
  if (image_channels == 0) fail("image_channels must be positive");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  for (std::size_t l = 0; l < kLevels; ++l) {
    if (stl_counts[l] == 0) fail("stl_counts[" + std::to_string(l) + "] must be positive");
    const std::size_t div = std::size_t{1} << l;
    if (height % div != 0 || width % div != 0)
      fail("input " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by " +
           std::to_string(div) + " at level " + std::to_string(l + 1));
    if ((height / div) % window_size != 0 || (width / div) % window_size != 0)
      fail("window " + std::to_string(window_size) + " does not divide level " + std::to_string(l + 1) +
           " extent " + std::to_string(height / div) + "x" + std::to_string(width / div));
    if (level_channels(l) % level_heads(l) != 0)
      fail("level " + std::to_string(l + 1) + " channels " + std::to_string(level_channels(l)) +
           " not divisible by heads " + std::to_string(level_heads(l)));
  }
}

nlohmann::json Config::to_json() const {
  nlohmann::json j;
  j["base_channels"] = base_channels;
  j["stl_counts"] = stl_counts;
  j["window_size"] = window_size;
  std::array<std::size_t, kLevels> h{};
  for (std::size_t l = 0; l < kLevels; ++l) h[l] = level_heads(l);
  j["heads_per_level"] = h;
  j["mlp_ratio"] = mlp_ratio;
  j["image_channels"] = image_channels;
  j["input_size"] = {height, width};
  return j;
}

Config Config::from_json(const nlohmann::json& j) {
  Config c;
  try {
    c.base_channels = j.value("base_channels", c.base_channels);
    if (j.contains("stl_counts")) c.stl_counts = j.at("stl_counts").get<std::array<std::size_t, kLevels>>();
    c.window_size = j.value("window_size", c.window_size);
    if (j.contains("heads_per_level"))
      c.heads = j.at("heads_per_level").get<std::array<std::size_t, kLevels>>();
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.image_channels = j.value("image_channels", c.image_channels);
    if (j.contains("input_size")) {
      const auto sz = j.at("input_size").get<std::array<std::size_t, 2>>();
      c.height = sz[0];
      c.width = sz[1];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed STUNet config: ") + e.what());
  }
  return c;
}

// ---- parameters -------------------------------------------------------------

namespace {

void append_layer(std::vector<Tensor>& out, const LayerParams& p) {
  for (const Tensor* t : {&p.norm1_gamma, &p.norm1_beta, &p.q_weight, &p.q_bias, &p.k_weight, &p.k_bias,
                          &p.v_weight, &p.v_bias, &p.proj_weight, &p.proj_bias, &p.bias_table,
                          &p.norm2_gamma, &p.norm2_beta, &p.fc1_weight, &p.fc1_bias, &p.fc2_weight,
                          &p.fc2_bias})
    out.push_back(*t);
}

constexpr const char* kLayerFields[] = {"norm1.gamma", "norm1.beta", "q.weight",  "q.bias",
                                        "k.weight",    "k.bias",     "v.weight",  "v.bias",
                                        "proj.weight", "proj.bias",  "bias_table", "norm2.gamma",
                                        "norm2.beta",  "fc1.weight", "fc1.bias",  "fc2.weight",
                                        "fc2.bias"};

}  // namespace

std::vector<Tensor> Weights::parameters() const {
  std::vector<Tensor> out{embed_weight, embed_bias};
  for (std::size_t l = 0; l < kLevels; ++l) {
    for (const auto& layer : encoder[l].layers) append_layer(out, layer);
    if (l + 1 < kLevels) {
      out.push_back(down_weight[l]);
      out.push_back(down_bias[l]);
    }
  }
  for (std::size_t l = kLevels - 1; l-- > 0;) {
    out.push_back(up_weight[l]);
    out.push_back(up_bias[l]);
    for (const auto& layer : decoder[l].layers) append_layer(out, layer);
  }
  out.push_back(restore_weight);
  out.push_back(restore_bias);
  return out;
}

std::vector<std::string> Weights::parameter_names() const {
  std::vector<std::string> out{"embed.weight", "embed.bias"};
  auto layer_names = [&](const std::string& prefix, const BlockParams& b) {
    for (std::size_t j = 0; j < b.layers.size(); ++j)
      for (const char* f : kLayerFields) out.push_back(prefix + ".layer" + std::to_string(j) + "." + f);
  };
  for (std::size_t l = 0; l < kLevels; ++l) {
    layer_names("encoder" + std::to_string(l + 1), encoder[l]);
    if (l + 1 < kLevels) {
      out.push_back("down" + std::to_string(l + 1) + ".weight");
      out.push_back("down" + std::to_string(l + 1) + ".bias");
    }
  }
  for (std::size_t l = kLevels - 1; l-- > 0;) {
    out.push_back("up" + std::to_string(l + 1) + ".weight");
    out.push_back("up" + std::to_string(l + 1) + ".bias");
    layer_names("decoder" + std::to_string(l + 1), decoder[l]);
  }
  out.push_back("restore.weight");
  out.push_back("restore.bias");
  return out;
}

std::size_t Weights::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::uint64_t Weights::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : parameters())
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFF;
        h *= 0x100000001B3ULL;
      }
    }
  return h;
}

void Weights::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor trunc_normal(ad::Shape shape, double std = 0.02) {
    const std::size_t n = ad::numel(shape);
    std::vector<double> v(n);
    for (auto& x : v) {
      double z = rng_.normal();
      while (std::abs(z) > 2.0) z = rng_.normal();
      x = z * std;
    }
    return Tensor(std::move(shape), std::move(v), true);
  }
  static Tensor zeros(ad::Shape shape) { return Tensor::zeros(std::move(shape), true); }
  static Tensor ones(ad::Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

 private:
  Rng rng_;
};

BlockParams make_block(Initializer& init, const Config& cfg, std::size_t level, std::size_t count) {
  const std::size_t C = cfg.level_channels(level), hidden = cfg.level_hidden(level);
  const std::size_t span = 2 * cfg.window_size - 1;
  BlockParams block;
  for (std::size_t j = 0; j < count; ++j) {
    LayerParams p;
    p.norm1_gamma = Initializer::ones({C});
    p.norm1_beta = Initializer::zeros({C});
    p.q_weight = init.trunc_normal({C, C});
    p.q_bias = Initializer::zeros({C});
    p.k_weight = init.trunc_normal({C, C});
    p.k_bias = Initializer::zeros({C});
    p.v_weight = init.trunc_normal({C, C});
    p.v_bias = Initializer::zeros({C});
    p.proj_weight = init.trunc_normal({C, C});
    p.proj_bias = Initializer::zeros({C});
    p.bias_table = Initializer::zeros({span * span, cfg.level_heads(level)});
    p.norm2_gamma = Initializer::ones({C});
    p.norm2_beta = Initializer::zeros({C});
    p.fc1_weight = init.trunc_normal({C, hidden});
    p.fc1_bias = Initializer::zeros({hidden});
    p.fc2_weight = init.trunc_normal({hidden, C});
    p.fc2_bias = Initializer::zeros({C});
    block.layers.push_back(std::move(p));
  }
  return block;
}

}  // namespace

Weights build(const Config& config, std::uint64_t seed) {
  config.validate();
  Initializer init(seed);
  Weights w;
  w.config = config;
  const std::size_t C = config.base_channels, CI = config.image_channels;
  w.embed_weight = init.trunc_normal({C, CI, 3, 3});
  w.embed_bias = Initializer::zeros({C});
  for (std::size_t l = 0; l < kLevels; ++l) {
    w.encoder[l] = make_block(init, config, l, config.stl_counts[l]);
    if (l + 1 < kLevels) {
      w.down_weight[l] = init.trunc_normal({4 * config.level_channels(l), config.level_channels(l + 1)});
      w.down_bias[l] = Initializer::zeros({config.level_channels(l + 1)});
    }
  }
  for (std::size_t l = kLevels - 1; l-- > 0;) {
    w.up_weight[l] = init.trunc_normal({config.level_channels(l + 1) / 4, config.level_channels(l)});
    w.up_bias[l] = Initializer::zeros({config.level_channels(l)});
    w.decoder[l] = make_block(init, config, l, config.stl_counts[l]);
  }
  w.restore_weight = init.trunc_normal({CI, C, 3, 3});
  w.restore_bias = Initializer::zeros({CI});
  return w;
}

// ---- layers -----------------------------------------------------------------

std::optional<ad::Shape> ShapeProbe::find(const std::string& name) const {
  for (const auto& [n, s] : features)
    if (n == name) return s;
  return std::nullopt;
}

std::vector<double> shift_mask(std::size_t height, std::size_t width, std::size_t window,
                               std::size_t shift) {
  // Label the three bands per axis that a roll by -shift brings together,
  // then forbid attention between tokens with different labels.
  auto band = [&](std::size_t i, std::size_t n) -> std::size_t {
    if (i < n - window) return 0;
    if (i < n - shift) return 1;
    return 2;
  };
  const std::size_t wy = height / window, wx = width / window, T = window * window;
  std::vector<double> mask(wy * wx * T * T, 0.0);
  std::vector<std::size_t> label(T);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t by = 0; by < wy; ++by)
    for (std::size_t bx = 0; bx < wx; ++bx) {
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t y = by * window + t / window, x = bx * window + t % window;
        label[t] = band(y, height) * 3 + band(x, width);
      }
      double* m = mask.data() + (by * wx + bx) * T * T;
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) m[i * T + j] = label[i] == label[j] ? 0.0 : neg_inf;
    }
  return mask;
}

Tensor window_attention(const Tensor& x, const LayerParams& p, std::size_t heads,
                        std::size_t window, std::span<const double> mask,
                        std::size_t mask_windows, AttentionTrace* trace) {
  if (x.rank() != 3) throw DimensionError("window_attention: expected windows x tokens x C");
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  if (T != window * window)
    throw DimensionError("window_attention: token axis is " + std::to_string(T) + ", expected " +
                         std::to_string(window * window));
  if (heads == 0 || C % heads != 0)
    throw DimensionError("window_attention: channels " + std::to_string(C) + " not divisible by heads");
  const std::size_t d = C / heads;
  auto split_heads = [&](const Tensor& t) {
    return ad::reshape(ad::permute(ad::reshape(t, {B, T, heads, d}), {0, 2, 1, 3}), {B * heads, T, d});
  };
  const Tensor q = split_heads(ad::linear(x, p.q_weight, p.q_bias));
  const Tensor k = split_heads(ad::linear(x, p.k_weight, p.k_bias));
  const Tensor v = split_heads(ad::linear(x, p.v_weight, p.v_bias));
  Tensor logits = ad::scale(ad::bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
  logits = ad::add_attention_bias(logits, ad::relative_position_bias(p.bias_table, window), mask, mask_windows);
  const Tensor attn = ad::softmax_last(logits);
  if (trace != nullptr) trace->weights = attn;
  Tensor mixed = ad::bmm(attn, v);
  mixed = ad::reshape(ad::permute(ad::reshape(mixed, {B, heads, T, d}), {0, 2, 1, 3}), {B, T, C});
  return ad::linear(mixed, p.proj_weight, p.proj_bias);
}

Tensor stl_forward(const Tensor& x, const LayerParams& p, std::size_t heads, std::size_t window,
                   bool shifted) {
  if (x.rank() != 4) throw DimensionError("stl_forward: expected N x H x W x C");
  const std::size_t H = x.dim(1), W = x.dim(2);
  if (H % window != 0 || W % window != 0)
    throw DimensionError("stl_forward: extent " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by window " + std::to_string(window));
  const auto s = static_cast<std::ptrdiff_t>(window / 2);
  Tensor h = ad::layer_norm(x, p.norm1_gamma, p.norm1_beta);
  std::vector<double> mask;
  if (shifted) {
    h = ad::cyclic_shift(h, -s, -s);
    mask = shift_mask(H, W, window, window / 2);
  }
  Tensor win = ad::window_partition(h, window);
  win = window_attention(win, p, heads, window, mask, (H / window) * (W / window));
  h = ad::window_reverse(win, window, H, W);
  if (shifted) h = ad::cyclic_shift(h, s, s);
  const Tensor after_msa = ad::add(x, h);

  Tensor m = ad::layer_norm(after_msa, p.norm2_gamma, p.norm2_beta);
  m = ad::gelu(ad::linear(m, p.fc1_weight, p.fc1_bias));
  m = ad::linear(m, p.fc2_weight, p.fc2_bias);
  return ad::add(after_msa, m);
}

Tensor stb_forward(const Tensor& x, const BlockParams& block, std::size_t heads, std::size_t window,
                   ShapeProbe* probe, const std::string& name) {
  Tensor h = x;
  for (std::size_t j = 0; j < block.layers.size(); ++j) h = stl_forward(h, block.layers[j], heads, window, j % 2 == 1);
  if (probe != nullptr) probe->block_layers.emplace_back(name, block.layers.size());
  return h;
}

namespace {

Tensor to_nhwc(const Tensor& t) { return ad::permute(t, {0, 2, 3, 1}); }
Tensor to_nchw(const Tensor& t) { return ad::permute(t, {0, 3, 1, 2}); }

}  // namespace

Tensor forward(const Weights& w, const Tensor& input, ShapeProbe* probe) {
  const Config& cfg = w.config;
  if (input.rank() != 4 || input.dim(1) != cfg.image_channels || input.dim(2) != cfg.height ||
      input.dim(3) != cfg.width)
    throw DimensionError("forward: expected N x " + std::to_string(cfg.image_channels) + " x " +
                         std::to_string(cfg.height) + " x " + std::to_string(cfg.width) + " input, got " +
                         ad::to_string(input.shape()));
  auto note = [&](const char* name, const Tensor& t) {
    if (probe != nullptr) probe->features.emplace_back(name, t.shape());
  };

  const Tensor shallow = ad::conv2d(input, w.embed_weight, w.embed_bias, 1);
  note("embed", to_nhwc(shallow));

  std::array<Tensor, kLevels> enc;
  Tensor h = to_nhwc(shallow);
  static constexpr const char* kEnc[] = {"encoder1", "encoder2", "encoder3", "encoder4"};
  static constexpr const char* kDec[] = {"decoder1", "decoder2", "decoder3"};
  for (std::size_t l = 0; l < kLevels; ++l) {
    if (l > 0) {
      h = to_nhwc(ad::pixel_unshuffle(to_nchw(h), 2));
      h = ad::linear(h, w.down_weight[l - 1], w.down_bias[l - 1]);
    }
    h = stb_forward(h, w.encoder[l], cfg.level_heads(l), cfg.window_size, probe, kEnc[l]);
    enc[l] = h;
    note(kEnc[l], h);
  }
  for (std::size_t l = kLevels - 1; l-- > 0;) {
    h = to_nhwc(ad::pixel_shuffle(to_nchw(h), 2));
    h = ad::linear(h, w.up_weight[l], w.up_bias[l]);
    h = ad::add(h, enc[l]);
    h = stb_forward(h, w.decoder[l], cfg.level_heads(l), cfg.window_size, probe, kDec[l]);
    note(kDec[l], h);
  }
  const Tensor aggregated = ad::add(shallow, to_nchw(h));
  return ad::conv2d(aggregated, w.restore_weight, w.restore_bias, 1);
}

// ---- image batches ----------------------------------------------------------

Tensor to_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw DimensionError("to_batch: empty batch");
  const auto& f = images.front();
  const std::size_t C = f.channels, H = f.height, W = f.width;
  std::vector<double> data(images.size() * C * H * W);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!images[n].same_dims(f)) throw DimensionError("to_batch: images differ in size");
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H * W; ++i) data[((n * C + c) * H * W) + i] = images[n].data[i * C + c];
  }
  return Tensor({images.size(), C, H, W}, std::move(data));
}

std::vector<ImageTensor> from_batch(const Tensor& batch, ImageRole role) {
  const std::size_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  std::vector<ImageTensor> out;
  const auto d = batch.data();
  for (std::size_t n = 0; n < N; ++n) {
    ImageTensor img(W, H, C);
    img.role = role;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H * W; ++i) img.data[i * C + c] = d[(n * C + c) * H * W + i];
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<ImageTensor> restore(const Weights& weights, std::span<const ImageTensor> lq) {
  const Tensor out = forward(weights, to_batch(lq));  // no active tape => nothing recorded
  auto images = from_batch(out, ImageRole::Restored);
  for (auto& img : images) img.clamp();
  return images;
}

ImageTensor restore(const Weights& weights, const ImageTensor& lq) {
  return restore(weights, std::span<const ImageTensor>(&lq, 1)).front();
}

// ---- training ---------------------------------------------------------------

Sgd::Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr >= 0.0)) throw ParameterError("SGD learning rate must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("SGD momentum must be in [0, 1)");
}

void Sgd::step(std::span<Tensor> params) {
  if (momentum_ > 0.0 && velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto v = p.mutable_data();
    if (momentum_ > 0.0) {
      auto& vel = velocity_[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        vel[k] = momentum_ * vel[k] + g[k];
        v[k] -= lr_ * vel[k];
      }
    } else {
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr_ * g[k];
    }
  }
}

double train_step(Weights& weights, const Tensor& lq, const Tensor& gt, Sgd& optimizer) {
  auto params = weights.parameters();
  for (auto& p : params) p.zero_grad();
  ad::Tape tape;
  double loss_value = 0.0;
  {
    ad::TapeScope scope(tape);
    const Tensor out = forward(weights, lq);
    const Tensor loss = ad::l1_loss(out, gt);
    loss_value = loss.item();
    if (!std::isfinite(loss_value))
      throw TrainingError("non-finite loss (" + std::to_string(loss_value) + ") at forward pass; " +
                          "parameters checksum " + std::to_string(weights.checksum()));
    tape.backward(loss);
  }
  optimizer.step(params);
  return loss_value;
}

double train_step(Weights& weights, const Tensor& lq, const Tensor& gt, double lr) {
  Sgd opt(lr);
  return train_step(weights, lq, gt, opt);
}

}  // namespace bfr::stunet
