#include "bfr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "bfr/error.hpp"
#include "bfr/kernels.hpp"

namespace bfr::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return nullptr;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return g_active_tape;
  return nullptr;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
}

// out[i] = in[src[i]]. The adjoint scatters, so a non-injective map (as in
// the relative position table) accumulates correctly.
Tensor gather(const char* op, const Tensor& input, Shape shape, std::vector<std::size_t> src) {
  std::vector<double> data(src.size());
  const auto in = input.data();
  for (std::size_t i = 0; i < src.size(); ++i) data[i] = in[src[i]];
  Tensor out(std::move(shape), std::move(data));
  if (Tape* tape = recording_tape({&input})) {
    tape->record(op, {input}, out, [input, out, src = std::move(src)]() mutable {
      std::vector<double> g(input.numel(), 0.0);
      const auto go = out.grad();
      for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += go[i];
      input.accumulate_grad(g);
    });
  }
  return out;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (ad::numel(shape) != data.size())
    throw DimensionError("tensor: shape " + ad::to_string(shape) + " holds " +
                         std::to_string(ad::numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor is not a scalar " + ad::to_string(shape()));
  return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) const {
  if (!impl_->requires_grad) return;
  auto buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

// ---- Tape -------------------------------------------------------------------

Tape::~Tape() { clear(); }

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor& output,
                  std::function<void()> backward) {
  output.impl_->requires_grad = true;
  output.impl_->tape = this;
  nodes_.push_back(Node{std::move(op), std::move(inputs), output, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar tensor");
  if (loss.tape() != this) throw ContractError("backward: loss was not recorded on this tape");
  for (auto& node : nodes_) {
    auto& g = node.output.impl_->grad;
    g.assign(node.output.numel(), 0.0);
  }
  loss.impl_->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

void Tape::clear() {
  for (auto& node : nodes_) node.output.impl_->tape = nullptr;
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar tensor");
  if (loss.tape() == nullptr) throw ContractError("backward: loss is not on a tape");
  loss.tape()->backward(loss);
}

// ---- elementwise & reductions -----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> data(a.numel());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a.data()[i] + b.data()[i];
  Tensor out(a.shape(), std::move(data));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("add", {a, b}, out, [a, b, out]() mutable {
      a.accumulate_grad(out.grad());
      b.accumulate_grad(out.grad());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> data(a.numel());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a.data()[i] - b.data()[i];
  Tensor out(a.shape(), std::move(data));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("sub", {a, b}, out, [a, b, out]() mutable {
      a.accumulate_grad(out.grad());
      if (b.requires_grad()) {
        std::vector<double> g(out.grad().begin(), out.grad().end());
        for (double& v : g) v = -v;
        b.accumulate_grad(g);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> data(a.data().begin(), a.data().end());
  for (double& v : data) v *= s;
  Tensor out(a.shape(), std::move(data));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("scale", {a}, out, [a, out, s]() mutable {
      std::vector<double> g(out.grad().begin(), out.grad().end());
      for (double& v : g) v *= s;
      a.accumulate_grad(g);
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = recording_tape({&a})) {
    tape->record("sum", {a}, out, [a, out]() mutable {
      a.accumulate_grad(std::vector<double>(a.numel(), out.grad()[0]));
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_loss");
  const std::size_t n = a.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a.data()[i] - b.data()[i]);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("l1_loss", {a, b}, out, [a, b, out, n]() mutable {
      const double g0 = out.grad()[0] / static_cast<double>(n);
      std::vector<double> g(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = a.data()[i] - b.data()[i];
        g[i] = d > 0.0 ? g0 : (d < 0.0 ? -g0 : 0.0);
      }
      a.accumulate_grad(g);
      if (b.requires_grad()) {
        for (double& v : g) v = -v;
        b.accumulate_grad(g);
      }
    });
  }
  return out;
}

// ---- layout -----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (ad::numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (Tape* tape = recording_tape({&a})) {
    tape->record("reshape", {a}, out, [a, out]() mutable { a.accumulate_grad(out.grad()); });
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  require(axes.size() == r, "permute: expected " + std::to_string(r) + " axes");
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    require(ax < r && !seen[ax], "permute: axes are not a permutation");
    seen[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(axes[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.dim(i);
  const std::size_t n = a.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> coord(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < r; ++k) off += coord[k] * in_stride[axes[k]];
    src[i] = off;
    for (std::size_t k = r; k-- > 0;) {
      if (++coord[k] < out_shape[k]) break;
      coord[k] = 0;
    }
  }
  return gather("permute", a, std::move(out_shape), std::move(src));
}

Tensor pixel_unshuffle(const Tensor& input, std::size_t r) {
  require(input.rank() == 4, "pixel_unshuffle: expected NCHW input");
  require(r > 0, "pixel_unshuffle: factor must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  require(H % r == 0, "pixel_unshuffle: height " + std::to_string(H) + " not divisible by " + std::to_string(r));
  require(W % r == 0, "pixel_unshuffle: width " + std::to_string(W) + " not divisible by " + std::to_string(r));
  const std::size_t OC = C * r * r, OH = H / r, OW = W / r;
  std::vector<std::size_t> src(input.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < OC; ++oc) {
      const std::size_t c = oc / (r * r), dy = (oc / r) % r, dx = oc % r;
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t x = 0; x < OW; ++x)
          src[i++] = ((n * C + c) * H + y * r + dy) * W + x * r + dx;
    }
  return gather("pixel_unshuffle", input, {N, OC, OH, OW}, std::move(src));
}

Tensor pixel_shuffle(const Tensor& input, std::size_t r) {
  require(input.rank() == 4, "pixel_shuffle: expected NCHW input");
  require(r > 0, "pixel_shuffle: factor must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  require(C % (r * r) == 0, "pixel_shuffle: channels " + std::to_string(C) + " not divisible by " +
                                std::to_string(r * r));
  const std::size_t OC = C / (r * r), OH = H * r, OW = W * r;
  std::vector<std::size_t> src(input.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < OC; ++oc)
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t x = 0; x < OW; ++x) {
          const std::size_t ic = oc * r * r + (y % r) * r + x % r;
          src[i++] = ((n * C + ic) * H + y / r) * W + x / r;
        }
  return gather("pixel_shuffle", input, {N, OC, OH, OW}, std::move(src));
}

Tensor window_partition(const Tensor& input, std::size_t window) {
  require(input.rank() == 4, "window_partition: expected NHWC input");
  const std::size_t N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require(window > 0 && H % window == 0,
          "window_partition: height " + std::to_string(H) + " not divisible by window " + std::to_string(window));
  require(W % window == 0,
          "window_partition: width " + std::to_string(W) + " not divisible by window " + std::to_string(window));
  const std::size_t wy = H / window, wx = W / window, T = window * window;
  std::vector<std::size_t> src(input.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t by = 0; by < wy; ++by)
      for (std::size_t bx = 0; bx < wx; ++bx)
        for (std::size_t ty = 0; ty < window; ++ty)
          for (std::size_t tx = 0; tx < window; ++tx)
            for (std::size_t c = 0; c < C; ++c)
              src[i++] = ((n * H + by * window + ty) * W + bx * window + tx) * C + c;
  return gather("window_partition", input, {N * wy * wx, T, C}, std::move(src));
}

Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t height,
                      std::size_t width) {
  require(windows.rank() == 3, "window_reverse: expected (windows x tokens x C) input");
  require(window > 0 && height % window == 0 && width % window == 0,
          "window_reverse: extent not divisible by window");
  const std::size_t T = window * window;
  require(windows.dim(1) == T, "window_reverse: token axis is " + std::to_string(windows.dim(1)) +
                                   ", expected " + std::to_string(T));
  const std::size_t wy = height / window, wx = width / window;
  require(windows.dim(0) % (wy * wx) == 0, "window_reverse: window count does not match extent");
  const std::size_t N = windows.dim(0) / (wy * wx), C = windows.dim(2);
  std::vector<std::size_t> src(windows.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t b = (n * wy + y / window) * wx + x / window;
        const std::size_t t = (y % window) * window + x % window;
        for (std::size_t c = 0; c < C; ++c) src[i++] = (b * T + t) * C + c;
      }
  return gather("window_reverse", windows, {N, height, width, C}, std::move(src));
}

Tensor cyclic_shift(const Tensor& input, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  require(input.rank() == 4, "cyclic_shift: expected NHWC input");
  const std::size_t N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const auto mod = [](std::ptrdiff_t v, std::size_t m) {
    const auto mm = static_cast<std::ptrdiff_t>(m);
    return static_cast<std::size_t>(((v % mm) + mm) % mm);
  };
  const std::size_t sy = mod(dy, H), sx = mod(dx, W);
  std::vector<std::size_t> src(input.numel());
  std::size_t i = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t yy = (y + H - sy) % H, xx = (x + W - sx) % W;
        for (std::size_t c = 0; c < C; ++c) src[i++] = ((n * H + yy) * W + xx) * C + c;
      }
  return gather("cyclic_shift", input, input.shape(), std::move(src));
}

Tensor relative_position_bias(const Tensor& table, std::size_t window) {
  const std::size_t span = 2 * window - 1;
  require(table.rank() == 2 && table.dim(0) == span * span,
          "relative_position_bias: table must have (2w-1)^2 = " + std::to_string(span * span) + " rows");
  const std::size_t heads = table.dim(1), T = window * window;
  std::vector<std::size_t> src(heads * T * T);
  std::size_t i = 0;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t a = 0; a < T; ++a)
      for (std::size_t b = 0; b < T; ++b) {
        // offsets in [-(w-1), w-1] shifted to [0, 2w-2]
        const std::size_t ry = a / window + window - 1 - b / window;
        const std::size_t rx = a % window + window - 1 - b % window;
        src[i++] = (ry * span + rx) * heads + h;
      }
  return gather("relative_position_bias", table, {heads, T, T}, std::move(src));
}

// ---- dense ops --------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  require(input.rank() == 4, "conv2d: input must be NCHW, got " + to_string(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be OIkk, got " + to_string(weight.shape()));
  require(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square (axes 2,3 of weight)");
  require(input.dim(1) == weight.dim(1), "conv2d: input channel axis (1) is " + std::to_string(input.dim(1)) +
                                             " but weight expects " + std::to_string(weight.dim(1)));
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "conv2d: bias axis 0 must equal weight output channels " + std::to_string(weight.dim(0)));
  kernels::ConvDims d;
  d.batch = input.dim(0);
  d.in_channels = input.dim(1);
  d.height = input.dim(2);
  d.width = input.dim(3);
  d.out_channels = weight.dim(0);
  d.kernel = weight.dim(2);
  d.pad = padding;
  require(d.height + 2 * padding >= d.kernel && d.width + 2 * padding >= d.kernel,
          "conv2d: kernel larger than padded input (axes 2,3)");
  std::vector<double> data(d.batch * d.out_channels * d.out_height() * d.out_width());
  kernels::conv2d_forward(d, input.data(), weight.data(), bias.data(), data);
  Tensor out({d.batch, d.out_channels, d.out_height(), d.out_width()}, std::move(data));
  if (Tape* tape = recording_tape({&input, &weight, &bias})) {
    tape->record("conv2d", {input, weight, bias}, out, [input, weight, bias, out, d]() mutable {
      if (input.requires_grad()) {
        std::vector<double> g(input.numel());
        kernels::conv2d_backward_input(d, out.grad(), weight.data(), g);
        input.accumulate_grad(g);
      }
      if (weight.requires_grad() || bias.requires_grad()) {
        std::vector<double> gw(weight.numel()), gb(bias.numel());
        kernels::conv2d_backward_weight(d, out.grad(), input.data(), gw, gb);
        weight.accumulate_grad(gw);
        bias.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(input.rank() >= 1, "linear: input must have at least one axis");
  require(weight.rank() == 2, "linear: weight must be D x E");
  const std::size_t D = input.shape().back();
  require(weight.dim(0) == D, "linear: input last axis " + std::to_string(D) +
                                  " does not match weight axis 0 (" + std::to_string(weight.dim(0)) + ")");
  const std::size_t E = weight.dim(1);
  require(bias.rank() == 1 && bias.dim(0) == E, "linear: bias must have length " + std::to_string(E));
  kernels::MatmulDims d{input.numel() / D, D, E};
  std::vector<double> data(d.rows * E);
  kernels::matmul_forward(d, input.data(), weight.data(), bias.data(), data);
  Shape shape = input.shape();
  shape.back() = E;
  Tensor out(std::move(shape), std::move(data));
  if (Tape* tape = recording_tape({&input, &weight, &bias})) {
    tape->record("linear", {input, weight, bias}, out, [input, weight, bias, out, d]() mutable {
      if (input.requires_grad()) {
        std::vector<double> g(input.numel());
        kernels::matmul_backward_input(d, out.grad(), weight.data(), g);
        input.accumulate_grad(g);
      }
      if (weight.requires_grad() || bias.requires_grad()) {
        std::vector<double> gw(weight.numel()), gb(bias.numel());
        kernels::matmul_backward_weight(d, out.grad(), input.data(), gw, gb);
        weight.accumulate_grad(gw);
        bias.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
  require(input.rank() >= 1, "layer_norm: input must have at least one axis");
  const std::size_t D = input.shape().back();
  require(D >= 1, "layer_norm: empty normalized axis");
  require(gamma.rank() == 1 && gamma.dim(0) == D, "layer_norm: gamma must have length " + std::to_string(D));
  require(beta.rank() == 1 && beta.dim(0) == D, "layer_norm: beta must have length " + std::to_string(D));
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  const std::size_t rows = input.numel() / D;
  std::vector<double> xhat(input.numel()), rstd(rows), data(input.numel());
  const auto x = input.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * D;
    double mu = 0.0;
    for (std::size_t i = 0; i < D; ++i) mu += xr[i];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(D);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < D; ++i) {
      const double h = (xr[i] - mu) * rs;
      xhat[r * D + i] = h;
      data[r * D + i] = g[i] * h + b[i];
    }
  }
  Tensor out(input.shape(), std::move(data));
  if (Tape* tape = recording_tape({&input, &gamma, &beta})) {
    tape->record("layer_norm", {input, gamma, beta}, out,
                 [input, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, D]() mutable {
                   const auto go = out.grad();
                   const auto gg = gamma.data();
                   std::vector<double> dx(input.numel()), dgamma(D, 0.0), dbeta(D, 0.0);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t i = 0; i < D; ++i) {
                       const double dh = go[r * D + i] * gg[i];
                       s1 += dh;
                       s2 += dh * xhat[r * D + i];
                       dgamma[i] += go[r * D + i] * xhat[r * D + i];
                       dbeta[i] += go[r * D + i];
                     }
                     const double inv_d = 1.0 / static_cast<double>(D);
                     for (std::size_t i = 0; i < D; ++i) {
                       const double dh = go[r * D + i] * gg[i];
                       dx[r * D + i] = rstd[r] * (dh - inv_d * s1 - xhat[r * D + i] * inv_d * s2);
                     }
                   }
                   input.accumulate_grad(dx);
                   gamma.accumulate_grad(dgamma);
                   beta.accumulate_grad(dbeta);
                 });
  }
  return out;
}

Tensor softmax_last(const Tensor& input) {
  require(input.rank() >= 1 && input.shape().back() > 0, "softmax_last: empty last axis");
  const std::size_t D = input.shape().back(), rows = input.numel() / D;
  std::vector<double> data(input.numel());
  const auto x = input.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * D;
    double* yr = data.data() + r * D;
    const double mx = *std::max_element(xr, xr + D);
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      s += yr[i];
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < D; ++i) yr[i] *= inv;
  }
  Tensor out(input.shape(), std::move(data));
  if (Tape* tape = recording_tape({&input})) {
    tape->record("softmax_last", {input}, out, [input, out, D, rows]() mutable {
      const auto y = out.data();
      const auto go = out.grad();
      std::vector<double> g(input.numel());
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < D; ++i) dot += go[r * D + i] * y[r * D + i];
        for (std::size_t i = 0; i < D; ++i) g[r * D + i] = y[r * D + i] * (go[r * D + i] - dot);
      }
      input.accumulate_grad(g);
    });
  }
  return out;
}

Tensor gelu(const Tensor& input) {
  const auto x = input.data();
  std::vector<double> data(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    data[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  Tensor out(input.shape(), std::move(data));
  if (Tape* tape = recording_tape({&input})) {
    tape->record("gelu", {input}, out, [input, out]() mutable {
      const auto x = input.data();
      const auto go = out.grad();
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      std::vector<double> g(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
        g[i] = go[i] * (cdf + x[i] * pdf);
      }
      input.accumulate_grad(g);
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require(a.rank() == 3 && b.rank() == 3, "bmm: operands must be rank 3");
  require(a.dim(0) == b.dim(0), "bmm: batch axis (0) differs: " + std::to_string(a.dim(0)) + " vs " +
                                    std::to_string(b.dim(0)));
  kernels::BmmDims d;
  d.batch = a.dim(0);
  d.m = trans_a ? a.dim(2) : a.dim(1);
  d.k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  d.n = trans_b ? b.dim(1) : b.dim(2);
  d.trans_a = trans_a;
  d.trans_b = trans_b;
  require(d.k == kb, "bmm: inner dimensions differ: " + std::to_string(d.k) + " vs " + std::to_string(kb));
  std::vector<double> data(d.batch * d.m * d.n);
  kernels::bmm(d, a.data(), b.data(), data);
  Tensor out({d.batch, d.m, d.n}, std::move(data));
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record("bmm", {a, b}, out, [a, b, out, d]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        std::vector<double> ga(a.numel());
        kernels::BmmDims e;
        e.batch = d.batch;
        if (!d.trans_a) {  // dA = dC op(B)^T
          e.m = d.m; e.k = d.n; e.n = d.k;
          e.trans_a = false; e.trans_b = !d.trans_b;
          kernels::bmm(e, g, b.data(), ga);
        } else {  // dA = op(B) dC^T
          e.m = d.k; e.k = d.n; e.n = d.m;
          e.trans_a = d.trans_b; e.trans_b = true;
          kernels::bmm(e, b.data(), g, ga);
        }
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(b.numel());
        kernels::BmmDims e;
        e.batch = d.batch;
        if (!d.trans_b) {  // dB = op(A)^T dC
          e.m = d.k; e.k = d.m; e.n = d.n;
          e.trans_a = !d.trans_a; e.trans_b = false;
          kernels::bmm(e, a.data(), g, gb);
        } else {  // dB = dC^T op(A)
          e.m = d.n; e.k = d.m; e.n = d.k;
          e.trans_a = true; e.trans_b = d.trans_a;
          kernels::bmm(e, g, a.data(), gb);
        }
        b.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor add_attention_bias(const Tensor& logits, const Tensor& bias, std::span<const double> mask,
                          std::size_t mask_windows) {
  require(logits.rank() == 3 && logits.dim(1) == logits.dim(2), "add_attention_bias: logits must be B x T x T");
  require(bias.rank() == 3 && bias.dim(1) == logits.dim(1) && bias.dim(2) == logits.dim(2),
          "add_attention_bias: bias must be heads x T x T");
  const std::size_t heads = bias.dim(0), T = logits.dim(1), TT = T * T;
  require(logits.dim(0) % heads == 0, "add_attention_bias: batch axis not divisible by heads");
  const std::size_t blocks = logits.dim(0) / heads;
  if (!mask.empty())
    require(mask_windows > 0 && mask.size() == mask_windows * TT && blocks % mask_windows == 0,
            "add_attention_bias: mask must be windows x T x T and tile the batch");
  std::vector<double> data(logits.data().begin(), logits.data().end());
  const auto bv = bias.data();
  for (std::size_t blk = 0; blk < blocks; ++blk)
    for (std::size_t h = 0; h < heads; ++h) {
      double* dst = data.data() + (blk * heads + h) * TT;
      const double* bh = bv.data() + h * TT;
      for (std::size_t i = 0; i < TT; ++i) dst[i] += bh[i];
      if (!mask.empty()) {
        const double* m = mask.data() + (blk % mask_windows) * TT;
        for (std::size_t i = 0; i < TT; ++i) dst[i] += m[i];
      }
    }
  Tensor out(logits.shape(), std::move(data));
  if (Tape* tape = recording_tape({&logits, &bias})) {
    tape->record("add_attention_bias", {logits, bias}, out, [logits, bias, out, heads, blocks, TT]() mutable {
      const auto g = out.grad();
      logits.accumulate_grad(g);
      if (bias.requires_grad()) {
        std::vector<double> gb(heads * TT, 0.0);
        for (std::size_t blk = 0; blk < blocks; ++blk)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < TT; ++i) gb[h * TT + i] += g[(blk * heads + h) * TT + i];
        bias.accumulate_grad(gb);
      }
    });
  }
  return out;
}

}  // namespace bfr::ad
