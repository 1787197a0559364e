#include "scrl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scrl/representation.hpp"

namespace scrl {

void LossConfig::validate() const {
  if (!(xi >= 0.0) || !(zeta >= 0.0)) throw ContractError("loss margins must be >= 0");
  if (!(eta1 >= 0.0) || !(eta2 >= 0.0)) throw ContractError("loss weights must be >= 0");
  if (!(epsilon > 0.0)) throw ContractError("loss epsilon must be > 0");
}

template <typename T>
Tensor<T> label_indicator(std::span<const std::size_t> labels) {
  const std::size_t b = labels.size();
  if (b == 0) throw ContractError("label_indicator: empty batch");
  Tensor<T> l(Shape{b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) l(i, j) = labels[i] == labels[j] ? T{1} : T{-1};
  return l;
}

template <typename T>
T cosine_distance(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) {
    throw ShapeError("cosine_distance: lengths " + std::to_string(x.size()) + " and " +
                     std::to_string(y.size()));
  }
  double dot = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += static_cast<double>(x[i]) * y[i];
    xx += static_cast<double>(x[i]) * x[i];
    yy += static_cast<double>(y[i]) * y[i];
  }
  const double denom = std::max(std::sqrt(xx), kCosineNormFloor) *
                       std::max(std::sqrt(yy), kCosineNormFloor);
  return static_cast<T>(1.0 - std::clamp(dot / denom, -1.0, 1.0));
}

template <typename T>
ClassifierHeads<T> make_classifier_heads(std::size_t embed_dim, std::size_t classes,
                                         const InitConfig& init) {
  if (embed_dim == 0 || classes == 0) throw ContractError("classifier dimensions must be positive");
  auto w = init_params<T>({Shape{embed_dim, classes}, Shape{embed_dim, classes}}, init);
  return ClassifierHeads<T>{
      DenseLayer<T>{std::move(w[0]), Tensor<T>(Shape{classes}), Activation::kSoftmax},
      DenseLayer<T>{std::move(w[1]), Tensor<T>(Shape{classes}), Activation::kSoftmax}};
}

namespace {

template <typename T>
void check_pair(const Graph<T>& g, NodeId phi_i, NodeId phi_v) {
  const auto& a = g.value(phi_i).shape();
  const auto& b = g.value(phi_v).shape();
  if (a.size() != 2 || a != b) {
    throw ShapeError("image and voice representations differ: " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

template <typename T>
std::size_t check_batch(const Graph<T>& g, NodeId phi_i, NodeId phi_v,
                        std::span<const std::size_t> labels, const char* what) {
  check_pair(g, phi_i, phi_v);
  const std::size_t b = g.value(phi_i).dim(0);
  if (labels.size() != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(b));
  }
  if (b < 2) throw ContractError(std::string(what) + " needs a batch of at least 2");
  return b;
}

// Mean over ordered pairs i != j of relu(1 - l_ij (margin - D_ij)).
template <typename T>
NodeId hinge_mean(Graph<T>& g, NodeId dist, const Tensor<T>& ell, double margin) {
  const std::size_t b = ell.dim(0);
  Tensor<T> shift(ell.shape());
  for (std::size_t i = 0; i < ell.size(); ++i) {
    shift[i] = static_cast<T>(1.0 - static_cast<double>(ell[i]) * margin);
  }
  NodeId h = g.relu(g.scale_shift(dist, ell, std::move(shift)));
  Tensor<T> mask(ell.shape(), static_cast<T>(1.0 / static_cast<double>(b * (b - 1))));
  for (std::size_t i = 0; i < b; ++i) mask(i, i) = T{0};
  return g.weighted_sum(h, std::move(mask));
}

}  // namespace

template <typename T>
NodeId pairwise_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v) {
  check_pair(g, phi_i, phi_v);
  const std::size_t b = g.value(phi_i).dim(0);
  Tensor<T> diag(Shape{b, b});
  for (std::size_t i = 0; i < b; ++i) diag(i, i) = static_cast<T>(1.0 / static_cast<double>(b));
  return g.weighted_sum(g.cosine_distance(phi_i, phi_v), std::move(diag));
}

template <typename T>
NodeId intra_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v, std::span<const std::size_t> labels,
                  const LossConfig& cfg) {
  check_batch(g, phi_i, phi_v, labels, "intra_loss");
  const Tensor<T> ell = label_indicator<T>(labels);
  return g.add(hinge_mean(g, g.cosine_distance(phi_i, phi_i), ell, cfg.xi),
               hinge_mean(g, g.cosine_distance(phi_v, phi_v), ell, cfg.xi));
}

template <typename T>
NodeId inter_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v, std::span<const std::size_t> labels,
                  const LossConfig& cfg) {
  check_batch(g, phi_i, phi_v, labels, "inter_loss");
  const Tensor<T> ell = label_indicator<T>(labels);
  return g.add(hinge_mean(g, g.cosine_distance(phi_v, phi_i), ell, cfg.zeta),
               hinge_mean(g, g.cosine_distance(phi_i, phi_v), ell, cfg.zeta));
}

namespace {

// Sum of weighted terms; an empty sum is a constant zero.
template <typename T>
NodeId weighted_total(Graph<T>& g, const std::vector<std::pair<NodeId, double>>& terms) {
  if (terms.empty()) return g.input(Tensor<T>::scalar(T{0}));
  NodeId total = terms[0].second == 1.0 ? terms[0].first
                                        : g.scale(terms[0].first, static_cast<T>(terms[0].second));
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const auto& [node, w] = terms[k];
    total = g.add(total, w == 1.0 ? node : g.scale(node, static_cast<T>(w)));
  }
  return total;
}

template <typename T, typename H>
LossBreakdown build_joint(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                          std::span<const std::size_t> labels, H* heads, const LossConfig& cfg,
                          bool with_class) {
  cfg.validate();
  check_pair(g, phi_i, phi_v);
  std::vector<std::pair<NodeId, double>> terms;
  LossBreakdown out{};
  if (cfg.enable_pair) {
    NodeId n = pairwise_loss(g, phi_i, phi_v);
    out.pair = static_cast<double>(g.value(n)[0]);
    terms.emplace_back(n, 1.0);
  }
  if (cfg.enable_intra) {
    NodeId n = intra_loss(g, phi_i, phi_v, labels, cfg);
    out.intra = static_cast<double>(g.value(n)[0]);
    terms.emplace_back(n, cfg.eta1);
  }
  if (cfg.enable_inter) {
    NodeId n = inter_loss(g, phi_i, phi_v, labels, cfg);
    out.inter = static_cast<double>(g.value(n)[0]);
    terms.emplace_back(n, cfg.eta1);
  }
  if (with_class && cfg.enable_class) {
    NodeId n = classification_loss(g, phi_i, phi_v, labels, *heads, cfg);
    out.cls = static_cast<double>(g.value(n)[0]);
    terms.emplace_back(n, cfg.eta2);
  }
  out.total = weighted_total(g, terms);
  return out;
}

}  // namespace

template <typename T>
NodeId consistency_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                        std::span<const std::size_t> labels, const LossConfig& cfg) {
  return build_joint<T, ClassifierHeads<T>>(g, phi_i, phi_v, labels, nullptr, cfg, false).total;
}

template <typename T, typename H>
  requires LayerRef<H, ClassifierHeads<T>>
NodeId classification_loss(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                           std::span<const std::size_t> labels, H& heads, const LossConfig& cfg) {
  check_pair(g, phi_i, phi_v);
  const std::size_t b = g.value(phi_i).dim(0);
  if (labels.size() != b) {
    throw ShapeError("classification_loss: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(b));
  }
  for (std::size_t y : labels) {
    if (y >= heads.classes()) {
      throw ContractError("classification_loss: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(heads.classes()) + ")");
    }
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  const T eps = static_cast<T>(cfg.epsilon);
  NodeId pi = dense_affine(g, phi_i, heads.image);
  NodeId pv = dense_affine(g, phi_v, heads.voice);
  return g.add(g.nll(pi, y, eps), g.nll(pv, y, eps));
}

template <typename T, typename H>
  requires LayerRef<H, ClassifierHeads<T>>
LossBreakdown joint_loss_terms(Graph<T>& g, NodeId phi_i, NodeId phi_v,
                               std::span<const std::size_t> labels, H& heads,
                               const LossConfig& cfg) {
  return build_joint<T, H>(g, phi_i, phi_v, labels, &heads, cfg, true);
}

// ----------------------------------------------------------------- eager

template <typename T>
T pairwise_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v) {
  Graph<T> g;
  return g.value(pairwise_loss(g, g.input(phi_i), g.input(phi_v)))[0];
}

template <typename T>
T intra_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v, std::span<const std::size_t> labels,
             const LossConfig& cfg) {
  Graph<T> g;
  return g.value(intra_loss(g, g.input(phi_i), g.input(phi_v), labels, cfg))[0];
}

template <typename T>
T inter_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v, std::span<const std::size_t> labels,
             const LossConfig& cfg) {
  Graph<T> g;
  return g.value(inter_loss(g, g.input(phi_i), g.input(phi_v), labels, cfg))[0];
}

template <typename T>
T consistency_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v,
                   std::span<const std::size_t> labels, const LossConfig& cfg) {
  Graph<T> g;
  return g.value(consistency_loss(g, g.input(phi_i), g.input(phi_v), labels, cfg))[0];
}

template <typename T>
T classification_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v,
                      std::span<const std::size_t> labels, const ClassifierHeads<T>& heads,
                      const LossConfig& cfg) {
  Graph<T> g;
  return g.value(classification_loss(g, g.input(phi_i), g.input(phi_v), labels, heads, cfg))[0];
}

template <typename T>
T joint_loss(const Tensor<T>& phi_i, const Tensor<T>& phi_v, std::span<const std::size_t> labels,
             const ClassifierHeads<T>& heads, const LossConfig& cfg) {
  Graph<T> g;
  return g.value(joint_loss(g, g.input(phi_i), g.input(phi_v), labels, heads, cfg))[0];
}

// ------------------------------------------------------ instantiations

using Labels = std::span<const std::size_t>;

#define SCRL_LOSSES_INSTANTIATE(T)                                                             \
  template Tensor<T> label_indicator<T>(Labels);                                              \
  template T cosine_distance<T>(std::span<const T>, std::span<const T>);                      \
  template ClassifierHeads<T> make_classifier_heads<T>(std::size_t, std::size_t,              \
                                                       const InitConfig&);                    \
  template NodeId pairwise_loss<T>(Graph<T>&, NodeId, NodeId);                                \
  template NodeId intra_loss<T>(Graph<T>&, NodeId, NodeId, Labels, const LossConfig&);        \
  template NodeId inter_loss<T>(Graph<T>&, NodeId, NodeId, Labels, const LossConfig&);        \
  template NodeId consistency_loss<T>(Graph<T>&, NodeId, NodeId, Labels, const LossConfig&);  \
  template NodeId classification_loss<T, ClassifierHeads<T>>(                                 \
      Graph<T>&, NodeId, NodeId, Labels, ClassifierHeads<T>&, const LossConfig&);             \
  template NodeId classification_loss<T, const ClassifierHeads<T>>(                           \
      Graph<T>&, NodeId, NodeId, Labels, const ClassifierHeads<T>&, const LossConfig&);       \
  template LossBreakdown joint_loss_terms<T, ClassifierHeads<T>>(                             \
      Graph<T>&, NodeId, NodeId, Labels, ClassifierHeads<T>&, const LossConfig&);             \
  template LossBreakdown joint_loss_terms<T, const ClassifierHeads<T>>(                       \
      Graph<T>&, NodeId, NodeId, Labels, const ClassifierHeads<T>&, const LossConfig&);       \
  template T pairwise_loss<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template T intra_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels, const LossConfig&);    \
  template T inter_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels, const LossConfig&);    \
  template T consistency_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels,                  \
                                 const LossConfig&);                                          \
  template T classification_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels,               \
                                    const ClassifierHeads<T>&, const LossConfig&);            \
  template T joint_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels,                        \
                           const ClassifierHeads<T>&, const LossConfig&);

SCRL_LOSSES_INSTANTIATE(float)
SCRL_LOSSES_INSTANTIATE(double)

#undef SCRL_LOSSES_INSTANTIATE

}  // namespace scrl
