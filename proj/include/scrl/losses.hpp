#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scrl/graph.hpp"
#include "scrl/init.hpp"
#include "scrl/layers.hpp"
#include "scrl/tensor.hpp"

namespace scrl {

struct LossConfig {
  double xi = 0.4;    // intra-modality margin
  double zeta = 0.4;  // inter-modality margin
  double eta1 = 1.0;  // weight of intra + inter
  double eta2 = 0.1;  // weight of classification
  double epsilon = 1e-10;
  bool enable_pair = true;
  bool enable_intra = true;
  bool enable_inter = true;
  bool enable_class = true;

  // Throws ContractError on negative margins or weights, or epsilon <= 0.
  void validate() const;
};

// [B x B], +1 where labels agree and -1 elsewhere. The diagonal is +1 and is
// never read by the losses.
template <typename T>
Tensor<T> label_indicator(std::span<const std::size_t> labels);

// 1 - x.y / (max(|x|, 1e-12) max(|y|, 1e-12)), similarity clamped to [-1, 1].
template <typename T>
T cosine_distance(std::span<const T> x, std::span<const T> y);

// Softmax classifiers over the embedding, one per modality.
template <typename T>
struct ClassifierHeads {
  DenseLayer<T> image;  // [d x C], softmax
  DenseLayer<T> voice;

  std::size_t classes() const { return image.out_dim(); }
};

template <typename T>
ClassifierHeads<T> make_classifier_heads(std::size_t embed_dim, std::size_t classes,
                                         const InitConfig& init);

// Graph forms. phi_i / phi_v are [B x d] nodes.
template <typename T>
NodeId pairwise_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v);
template <typename T>
NodeId intra_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v, std::span<const std::size_t> labels,
                  const LossConfig& cfg);
template <typename T>
NodeId inter_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v, std::span<const std::size_t> labels,
                  const LossConfig& cfg);
template <typename T>
NodeId consistency_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                        std::span<const std::size_t> labels, const LossConfig& cfg);

template <typename T, typename H>
  requires LayerRef<H, ClassifierHeads<T>>
NodeId classification_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                           std::span<const std::size_t> labels, H& heads, const LossConfig& cfg);

// Enabled terms and the weighted total. Disabled terms stay at 0.
struct LossBreakdown {
  NodeId total;
  double pair = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double cls = 0.0;
};

template <typename T, typename H>
  requires LayerRef<H, ClassifierHeads<T>>
LossBreakdown joint_loss_terms(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                               std::span<const std::size_t> labels, H& heads,
                               const LossConfig& cfg);

template <typename T, typename H>
  requires LayerRef<H, ClassifierHeads<T>>
NodeId joint_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v, std::span<const std::size_t> labels,
                  H& heads, const LossConfig& cfg) {
  return joint_loss_terms(g, phi_i, phi_v, labels, heads, cfg).total;
}

// Eager forms on plain tensors.
template <typename T>
T pairwise_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v);
template <typename T>
T intra_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v, std::span<const std::size_t> labels,
             const LossConfig& cfg);
template <typename T>
T inter_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v, std::span<const std::size_t> labels,
             const LossConfig& cfg);
template <typename T>
T consistency_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v,
                   std::span<const std::size_t> labels, const LossConfig& cfg);
template <typename T>
T classification_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v,
                      std::span<const std::size_t> labels, const ClassifierHeads<T>& heads,
                      const LossConfig& cfg);
template <typename T>
T joint_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v, std::span<const std::size_t> labels,
             const ClassifierHeads<T>& heads, const LossConfig& cfg);

}  // namespace scrl
