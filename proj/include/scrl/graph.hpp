#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scrl/tensor.hpp"

namespace scrl {

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind : std::uint8_t {
  kInput,
  kParameter,
  kMatMul,
  kAddBias,
  kRelu,
  kTanh,
  kSoftmax,
  kConv1d,
  kConv2d,
  kMaxPool1d,
  kGlobalAvgPool,
  kReshape,
  kCosineDistance,
  kScaleShift,
  kWeightedSum,
  kNll,
  kAdd,
  kScale,
  kSum,
  kDot,
  kMul,
};

const char* op_name(OpKind kind);

// Norms below this are clamped inside cosine distance so zero vectors stay
// finite (they sit at distance 1 from everything).
inline constexpr double kCosineNormFloor = 1e-12;

struct Conv1dSpec {
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

// SAME padding: total (kernel-1)*dilation, the odd element goes left.
inline std::size_t same_pad_left(std::size_t kernel, std::size_t dilation) {
  return ((kernel - 1) * dilation + 1) / 2;
}

inline std::size_t same_out_len(std::size_t len, std::size_t stride) {
  return (len + stride - 1) / stride;
}

// Tape of operations recorded in creation order, which is a valid topological
// order. backward() walks it once in reverse.
//
// Leaves come in two flavours: input() owns a copy of its value, param() binds
// an external tensor without copying. A mutable parameter with requires_grad()
// receives its gradient directly in its own grad buffer (accumulating across
// calls); a const-bound tensor is a constant.
template <typename T>
class Graph {
 public:
  NodeId input(Tensor<T> value, bool requires_grad = false);
  NodeId param(Tensor<T>& p);
  NodeId param(const Tensor<T>& p);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId softmax(NodeId x);
  // x: [L x C_in] or [B x L x C_in]; w: [k x C_in x C_out]; b: [C_out].
  NodeId conv1d(NodeId x, NodeId w, NodeId b, Conv1dSpec spec);
  // x: [H x W x C_in] or [B x H x W x C_in]; w: [kh x kw x C_in x C_out].
  NodeId conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride);
  NodeId max_pool1d(NodeId x, std::size_t window, std::size_t stride);
  // [H x W x C] -> [C], [B x H x W x C] -> [B x C].
  NodeId global_avg_pool(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  // Rows of x [N x d] against rows of y [M x d] -> [N x M] of 1 - cos.
  NodeId cosine_distance(NodeId x, NodeId y);
  // Elementwise scale * x + shift with constant coefficients.
  NodeId scale_shift(NodeId x, Tensor<T> scale, Tensor<T> shift);
  NodeId weighted_sum(NodeId x, Tensor<T> weights);
  // Mean over rows of -log(p[i, labels[i]] + eps).
  NodeId nll(NodeId probs, std::vector<std::size_t> labels, T eps);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, T factor);
  NodeId sum(NodeId x);
  NodeId dot(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);

  const Tensor<T>& value(NodeId id) const;
  // Gradient of the last backward() w.r.t. a non-parameter node; empty when
  // the node received none.
  std::span<const T> grad(NodeId id) const;
  OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }
  std::span<const NodeId> inputs(NodeId id) const {
    return nodes_.at(id.index).inputs;
  }
  bool needs_grad(NodeId id) const { return nodes_.at(id.index).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Requires a single-element loss.
  void backward(NodeId loss);
  const std::vector<NodeId>& last_backward_order() const {
    return backward_order_;
  }

 private:
  using BackwardFn = std::function<void(Graph&, std::uint32_t)>;

  struct Node {
    OpKind kind = OpKind::kInput;
    std::vector<NodeId> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* param = nullptr;
    bool needs_grad = false;
    std::vector<T> grad;
    BackwardFn backward;
  };

  NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor<T> value,
              BackwardFn backward);
  const Node& node(NodeId id) const;
  const Tensor<T>& val(std::uint32_t index) const;
  std::span<T> grad_buffer(NodeId id);
  std::span<const T> upstream(std::uint32_t index) const {
    return nodes_[index].grad;
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> backward_order_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace scrl
