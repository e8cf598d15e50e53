#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "freeevent/tensor.hpp"

// Tape-free reverse-mode differentiation over Tensor-valued nodes. A node
// keeps its parents only when at least one of them requires a gradient, so
// pure inference builds no graph at all.
namespace freeevent::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
    return grad;
  }
};

class Var {
public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Accumulated gradient; empty when backward never reached this node.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Mutable access for optimizers acting on leaf parameters.
  Tensor& mutable_value() { return node_->value; }

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Builds a node from `value`; `backward` receives the finished node and
  /// pushes its gradient into `parents`. Parents and closure are dropped when
  /// no parent requires a gradient.
  static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

private:
  std::shared_ptr<Node> node_;
};

/// Runs reverse accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);

// Elementwise and structural operations. Shapes use N x C x H x W for image
// tensors and N x P x C for token sequences.
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& x);
Var conv2d(const Var& x, const Var& weight, const Var& bias, int padding);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var add_channel_bias(const Var& x, const Var& bias_nc);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);

/// y = x W^T + b over the last axis; W is out x in. `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var to_tokens(const Var& x);                   // N,C,H,W -> N,HW,C
Var from_tokens(const Var& x, int h, int w);   // N,HW,C -> N,C,H,W

/// softmax(Q K^T / sqrt(d_head)) per head: q N,Pq,C and k N,Pk,C -> N,heads,Pq,Pk.
Var attention_probs(const Var& q, const Var& k, int heads);
/// probs N,heads,Pq,Pk applied to v N,Pk,C -> N,Pq,C.
Var attention_apply(const Var& probs, const Var& v, int heads);

/// Mean of squared differences, a scalar.
Var mse(const Var& a, const Var& b);
Var mean_of(const std::vector<Var>& scalars);

}  // namespace freeevent::ad
