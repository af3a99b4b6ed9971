#pragma once

// Minimal dense tensor with reverse-mode differentiation.
//
// Tensors are double precision, row-major and always own their storage;
// reshape/permute materialize copies. Operations record themselves on the
// thread's active Tape (see TapeScope) when any input requires a gradient.
// Without an active tape nothing is recorded, which is how inference runs.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bfr::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  Tape* tape = nullptr;  // set for tensors produced by a recorded op
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Parameter storage for optimizers and initializers. Do not mutate tensors
  /// that are inputs of a pending backward pass.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  /// Adds g into the grad buffer (no-op unless requires_grad).
  void accumulate_grad(std::span<const double> g) const;
  std::span<double> grad_buffer() const;

  Tape* tape() const { return impl_->tape; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  friend class Tape;
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations for one forward pass.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  void record(std::string op, std::vector<Tensor> inputs, Tensor& output,
              std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and walks nodes in reverse insertion order.
  /// Intermediate gradients are reset first; leaf gradients accumulate
  /// across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear();

 private:
  std::vector<Node> nodes_;
};

/// Makes a tape the active one for the current thread while in scope.
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

/// backward(loss) on the tape that produced loss.
void backward(const Tensor& loss);

// ---- operations ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean |a - b| with subgradient 0 at ties.
Tensor l1_loss(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);

/// NCHW convolution, stride 1, zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding);
/// Affine map over the last axis; weight is D x E.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_last(const Tensor& input);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& input);

/// Batched product of rank-3 tensors, optionally transposing either operand.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

Tensor pixel_unshuffle(const Tensor& input, std::size_t r);
Tensor pixel_shuffle(const Tensor& input, std::size_t r);

/// N x H x W x C -> (N * H/w * W/w) x (w*w) x C
Tensor window_partition(const Tensor& input, std::size_t window);
/// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, std::size_t window, std::size_t height,
                      std::size_t width);
/// Toroidal roll of the H and W axes of an N x H x W x C tensor:
/// out[(y + dy) mod H, (x + dx) mod W] = in[y, x].
Tensor cyclic_shift(const Tensor& input, std::ptrdiff_t dy, std::ptrdiff_t dx);

/// Expands a ((2w-1)^2 x heads) relative-position table into a
/// heads x w^2 x w^2 bias.
Tensor relative_position_bias(const Tensor& table, std::size_t window);

/// logits: (B * heads) x T x T, grouped as B blocks of `heads`.
/// bias: heads x T x T, added to every block. mask: constant nW x T x T
/// additive term applied to block b using mask[b mod nW]; empty for none.
Tensor add_attention_bias(const Tensor& logits, const Tensor& bias,
                          std::span<const double> mask, std::size_t mask_windows);

}  // namespace bfr::ad
