#include "scrl/representation.hpp"

namespace scrl {

template <typename T>
std::vector<Tensor<T>> init_params(const std::vector<Shape>& shapes, const InitConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<Tensor<T>> out;
  out.reserve(shapes.size());
  for (const Shape& s : shapes) {
    Tensor<T> t(s);
    const std::size_t fan_in = s.size() > 1 ? numel(s) / s.back() : 1;
    init_truncated_normal(t, fan_in, cfg, rng);
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
ProjectionHead<T> make_projection_head(Modality modality, const HeadConfig& cfg,
                                       const InitConfig& init) {
  if (cfg.in_dim == 0 || cfg.hidden_dim == 0 || cfg.embed_dim == 0) {
    throw ContractError("projection head dimensions must be positive");
  }
  const std::array<std::size_t, 4> dims = {cfg.in_dim, cfg.hidden_dim, cfg.hidden_dim,
                                           cfg.embed_dim};
  auto weights = init_params<T>(
      {Shape{dims[0], dims[1]}, Shape{dims[1], dims[2]}, Shape{dims[2], dims[3]}}, init);
  const Activation act = modality == Modality::kImage ? Activation::kRelu : Activation::kTanh;
  ProjectionHead<T> head;
  head.modality = modality;
  for (std::size_t i = 0; i < 3; ++i) {
    head.layers[i] = DenseLayer<T>{std::move(weights[i]), Tensor<T>(Shape{dims[i + 1]}), act};
  }
  return head;
}

template std::vector<Tensor<float>> init_params<float>(const std::vector<Shape>&, const InitConfig&);
template std::vector<Tensor<double>> init_params<double>(const std::vector<Shape>&, const InitConfig&);
template ProjectionHead<float> make_projection_head<float>(Modality, const HeadConfig&, const InitConfig&);
template ProjectionHead<double> make_projection_head<double>(Modality, const HeadConfig&, const InitConfig&);

}  // namespace scrl
