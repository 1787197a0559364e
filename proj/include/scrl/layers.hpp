#pragma once

#include <concepts>
#include <cstddef>
#include <type_traits>

#include "scrl/graph.hpp"
#include "scrl/tensor.hpp"

namespace scrl {

enum class Activation { kNone, kRelu, kTanh, kSoftmax };

template <typename T>
NodeId apply_activation(Graph<T>& g, NodeId x, Activation kind) {
  switch (kind) {
    case Activation::kRelu: return g.relu(x);
    case Activation::kTanh: return g.tanh(x);
    case Activation::kSoftmax: return g.softmax(x);
    case Activation::kNone: break;
  }
  return x;
}

// Binding helpers below accept both mutable layers (trainable when the
// tensors require grad) and const layers (always frozen).
template <typename L, typename Base>
concept LayerRef = std::same_as<std::remove_const_t<L>, Base>;

template <typename T>
struct DenseLayer {
  Tensor<T> weights;  // [in x out]
  Tensor<T> bias;     // [out]
  Activation activation = Activation::kNone;

  std::size_t in_dim() const { return weights.dim(0); }
  std::size_t out_dim() const { return weights.dim(1); }
};

template <typename T, typename L>
  requires LayerRef<L, DenseLayer<T>>
NodeId dense_affine(Graph<T>& g, NodeId x, L& layer) {
  const Tensor<T>& in = g.value(x);
  if (in.rank() != 2 || in.dim(1) != layer.in_dim()) {
    throw ShapeError("dense layer expects [B x " + std::to_string(layer.in_dim()) +
                     "], got " + shape_str(in.shape()));
  }
  NodeId y = g.add_bias(g.matmul(x, g.param(layer.weights)), g.param(layer.bias));
  return apply_activation(g, y, layer.activation);
}

template <typename T>
Tensor<T> dense_affine(const Tensor<T>& x, const DenseLayer<T>& layer) {
  Graph<T> g;
  return g.value(dense_affine(g, g.input(x), layer));
}

template <typename T>
struct ConvLayer1D {
  Tensor<T> weights;  // [kernel x C_in x C_out]
  Tensor<T> bias;     // [C_out]
  std::size_t stride = 1;
  std::size_t dilation = 1;

  std::size_t kernel() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t out_channels() const { return weights.dim(2); }
};

template <typename T, typename L>
  requires LayerRef<L, ConvLayer1D<T>>
NodeId conv1d_dilated(Graph<T>& g, NodeId x, L& layer) {
  return g.conv1d(x, g.param(layer.weights), g.param(layer.bias),
                  Conv1dSpec{layer.stride, layer.dilation});
}

template <typename T>
Tensor<T> conv1d_dilated(const Tensor<T>& x, const ConvLayer1D<T>& layer) {
  Graph<T> g;
  return g.value(conv1d_dilated(g, g.input(x), layer));
}

template <typename T>
struct ConvLayer2D {
  Tensor<T> weights;  // [kh x kw x C_in x C_out]
  Tensor<T> bias;     // [C_out]
  std::size_t stride = 1;

  std::size_t in_channels() const { return weights.dim(2); }
  std::size_t out_channels() const { return weights.dim(3); }
};

template <typename T, typename L>
  requires LayerRef<L, ConvLayer2D<T>>
NodeId conv2d(Graph<T>& g, NodeId x, L& layer) {
  return g.conv2d(x, g.param(layer.weights), g.param(layer.bias), layer.stride);
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Graph<T> g;
  return g.value(g.global_avg_pool(g.input(x)));
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Graph<T> g;
  return g.value(apply_activation(g, g.input(x), kind));
}

}  // namespace scrl
