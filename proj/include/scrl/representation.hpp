#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "scrl/graph.hpp"
#include "scrl/init.hpp"
#include "scrl/layers.hpp"
#include "scrl/tensor.hpp"

namespace scrl {

enum class Modality { kImage, kVoice };

inline const char* modality_name(Modality m) { return m == Modality::kImage ? "image" : "voice"; }

inline constexpr std::size_t kImagePooledDim = 512;
inline constexpr std::size_t kVoiceFlatDim = 18000;
inline constexpr std::size_t kEmbedDim = 1024;

struct HeadConfig {
  std::size_t in_dim = kImagePooledDim;
  std::size_t hidden_dim = kEmbedDim;
  std::size_t embed_dim = kEmbedDim;
};

// Three dense layers, ReLU throughout for images and Tanh throughout for
// voices. One head per modality; both Siamese branches bind the same head.
template <typename T>
struct ProjectionHead {
  Modality modality = Modality::kImage;
  std::array<DenseLayer<T>, 3> layers;

  std::size_t in_dim() const { return layers[0].in_dim(); }
  std::size_t out_dim() const { return layers[2].out_dim(); }
};

// One tensor per shape; fan_in is the product of all but the last dim.
template <typename T>
std::vector<Tensor<T>> init_params(const std::vector<Shape>& shapes, const InitConfig& cfg);

// Weights from init_params, zero biases.
template <typename T>
ProjectionHead<T> make_projection_head(Modality modality, const HeadConfig& cfg,
                                       const InitConfig& init);

template <typename T, typename H>
  requires LayerRef<H, ProjectionHead<T>>
NodeId project(Graph<T>& g, NodeId x, H& head, Modality expected) {
  if (head.modality != expected) {
    throw ContractError(std::string("expected a ") + modality_name(expected) +
                        " head, got a " + modality_name(head.modality) + " head");
  }
  const Tensor<T>& in = g.value(x);
  if (in.rank() != 2 || in.dim(1) != head.in_dim()) {
    throw ContractError(std::string(modality_name(expected)) + " head expects [B x " +
                        std::to_string(head.in_dim()) + "], got " + shape_str(in.shape()));
  }
  NodeId h = x;
  for (auto& layer : head.layers) h = dense_affine(g, h, layer);
  return h;
}

// s: [B x in_dim] -> [B x embed_dim].
template <typename T, typename H>
NodeId project_image(Graph<T>& g, NodeId s, H& head) {
  return project(g, s, head, Modality::kImage);
}
template <typename T, typename H>
NodeId project_voice(Graph<T>& g, NodeId s, H& head) {
  return project(g, s, head, Modality::kVoice);
}

template <typename T>
Tensor<T> project_image(const Tensor<T>& s, const ProjectionHead<T>& head) {
  Graph<T> g;
  return g.value(project_image(g, g.input(s), head));
}
template <typename T>
Tensor<T> project_voice(const Tensor<T>& s, const ProjectionHead<T>& head) {
  Graph<T> g;
  return g.value(project_voice(g, g.input(s), head));
}

}  // namespace scrl
