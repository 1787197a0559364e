#pragma once

#include <array>
#include <concepts>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scrl/graph.hpp"
#include "scrl/init.hpp"
#include "scrl/layers.hpp"
#include "scrl/tensor.hpp"

namespace scrl {

// ------------------------------------------------------------ voice encoder

struct VoiceEncoderConfig {
  std::size_t input_length = 24000;
  bool dilated = true;  // false sets every dilation to 1
};

// Five dilated 1-D convs with ReLU, max pools (window 2, stride 2) after
// conv 3 and conv 5. Input [L] with one channel, output [L/64 x 1 x 48].
template <typename T>
struct VoiceEncoder {
  using Scalar = T;
  static constexpr std::size_t kConvs = 5;
  static constexpr std::size_t kPoolWindow = 2;
  static constexpr std::size_t kPoolStride = 2;
  static constexpr std::size_t kOutChannels = 48;

  std::array<ConvLayer1D<T>, kConvs> convs;
  std::size_t input_length = 24000;

  std::size_t output_length() const;  // temporal length after Pool2
  std::size_t feature_length() const { return output_length() * kOutChannels; }

  // Normalizable-stack interface.
  std::size_t conv_count() const { return kConvs; }
  // relu(conv_l(x)); x is the previous stage's output (raw [L x 1] for l = 0).
  // Pool1 is folded into the front of stage 3.
  Tensor<T> stage(std::size_t l, const Tensor<T>& x) const;
  Tensor<T>& filter_weights(std::size_t l) { return convs.at(l).weights; }
  Tensor<T>& filter_bias(std::size_t l) { return convs.at(l).bias; }
  const Tensor<T>& filter_weights(std::size_t l) const { return convs.at(l).weights; }
};

// Kernel, out channels, stride, dilation per conv.
struct VoiceConvGeometry {
  std::size_t kernel, out_channels, stride, dilation;
};
inline constexpr std::array<VoiceConvGeometry, 5> kVoiceConvs = {{
    {7, 1, 1, 3}, {3, 6, 2, 2}, {3, 12, 2, 2}, {3, 24, 2, 2}, {3, 48, 2, 2}}};

template <typename T>
VoiceEncoder<T> make_voice_encoder(const VoiceEncoderConfig& cfg, Rng& rng);

// x: [B x L] -> [B x feature_length()], the flattened [L/64 x 1 x 48] map.
template <typename T, typename E>
  requires LayerRef<E, VoiceEncoder<T>>
NodeId voice_encode(Graph<T>& g, NodeId x, E& enc);

// v: [L] -> [L/64 x 1 x 48]. Throws ShapeError on a wrong input length.
template <typename T>
Tensor<T> voice_encode(const Tensor<T>& v, const VoiceEncoder<T>& enc);

// --------------------------------------------------------------- image CNN

// SAME-padded 3x3 stride-2 conv stack with ReLU after every conv.
template <typename T>
struct TinyCnn {
  using Scalar = T;
  std::vector<ConvLayer2D<T>> convs;

  std::size_t conv_count() const { return convs.size(); }
  Tensor<T> stage(std::size_t l, const Tensor<T>& x) const;
  Tensor<T>& filter_weights(std::size_t l) { return convs.at(l).weights; }
  Tensor<T>& filter_bias(std::size_t l) { return convs.at(l).bias; }
  const Tensor<T>& filter_weights(std::size_t l) const { return convs.at(l).weights; }
};

inline constexpr std::array<std::size_t, 6> kTinyCnnChannels = {3, 16, 32, 64, 128, 512};
inline constexpr std::size_t kImageFeatureSide = 7;
inline constexpr std::size_t kImageFeatureChannels = 512;

template <typename T>
TinyCnn<T> make_tiny_cnn(Rng& rng, std::span<const std::size_t> channels = kTinyCnnChannels,
                         std::size_t kernel = 3, std::size_t stride = 2);

// [H x W x C] (optionally batched) -> last stage output.
template <typename T>
Tensor<T> tiny_cnn_forward(const Tensor<T>& image, const TinyCnn<T>& net);

template <typename T, typename N>
  requires LayerRef<N, TinyCnn<T>>
NodeId tiny_cnn_forward(Graph<T>& g, NodeId image, N& net) {
  NodeId h = image;
  for (auto& layer : net.convs) h = g.relu(conv2d(g, h, layer));
  return h;
}

// ------------------------------------------------------- image features

enum class ImageProviderMode { kPrecomputed, kTinyCnn };

// Mean pixel removed from [0, 1] images before the backbone sees them.
inline constexpr float kImageMeanPixel = 0.5f;

// x - kImageMeanPixel, elementwise.
Tensor<float> center_image(Tensor<float> image);

// Yields 7x7x512 feature maps either from SCRLT files or from a TinyCnn
// applied to mean-centred PPM images.
class ImageFeatureProvider {
 public:
  static ImageFeatureProvider precomputed();
  static ImageFeatureProvider tiny_cnn(TinyCnn<float> net);

  ImageProviderMode mode() const { return mode_; }
  const TinyCnn<float>& net() const;
  TinyCnn<float>& net();

  // Precomputed: SCRLT file of shape 7x7x512. TinyCnn: PPM image.
  Tensor<float> feature(const std::filesystem::path& path) const;
  // TinyCnn only: 224x224x3 image in [0, 1], centred internally.
  Tensor<float> feature(const Tensor<float>& image) const;

 private:
  ImageProviderMode mode_ = ImageProviderMode::kPrecomputed;
  TinyCnn<float> net_;
};

inline Tensor<float> image_feature(const std::filesystem::path& path,
                                   const ImageFeatureProvider& p) {
  return p.feature(path);
}

// [7 x 7 x 512] -> [512].
template <typename T>
Tensor<T> pool_image_feature(const Tensor<T>& f) {
  return global_avg_pool(f);
}

// ---------------------------------------------------- activation scaling

// Per-filter mean post-ReLU activation, one vector per conv layer.
struct NormalizationStats {
  std::vector<std::vector<double>> scales;
  std::vector<std::size_t> positions;  // spatial positions per layer
};

template <typename S>
concept NormalizableStack = requires(S s, const S cs, std::size_t l,
                                     const Tensor<typename S::Scalar>& x) {
  { cs.conv_count() } -> std::convertible_to<std::size_t>;
  { cs.stage(l, x) } -> std::same_as<Tensor<typename S::Scalar>>;
  { s.filter_weights(l) } -> std::same_as<Tensor<typename S::Scalar>&>;
  { s.filter_bias(l) } -> std::same_as<Tensor<typename S::Scalar>&>;
};

namespace detail {

template <typename T>
std::vector<double> channel_sums(const Tensor<T>& act) {
  const std::size_t c = act.shape().back();
  std::vector<double> sums(c, 0.0);
  const auto d = act.data();
  for (std::size_t i = 0; i < d.size(); ++i) sums[i % c] += static_cast<double>(d[i]);
  return sums;
}

template <typename T>
void scale_filter(Tensor<T>& w, Tensor<T>& b, std::size_t filter, double s) {
  const std::size_t cout = w.shape().back();
  for (std::size_t i = filter; i < w.size(); i += cout) {
    w[i] = static_cast<T>(static_cast<double>(w[i]) / s);
  }
  b[filter] = static_cast<T>(static_cast<double>(b[filter]) / s);
}

}  // namespace detail

// Throws ContractError when the stats do not describe this stack.
template <NormalizableStack S>
void apply_normalization(S& stack, const NormalizationStats& stats) {
  if (stats.scales.size() != stack.conv_count()) {
    throw ContractError("normalization stats cover " + std::to_string(stats.scales.size()) +
                        " layers, stack has " + std::to_string(stack.conv_count()));
  }
  for (std::size_t l = 0; l < stack.conv_count(); ++l) {
    auto& w = stack.filter_weights(l);
    auto& b = stack.filter_bias(l);
    if (stats.scales[l].size() != w.shape().back() || b.size() != w.shape().back()) {
      throw ContractError("normalization stats for layer " + std::to_string(l) +
                          " do not match its filter count");
    }
    for (std::size_t i = 0; i < stats.scales[l].size(); ++i) {
      const double s = stats.scales[l][i];
      if (s > 0.0) detail::scale_filter(w, b, i, s);
    }
  }
}

// Mean activation per filter, bottom-up: layer l is measured on a copy whose
// layers below l are already scaled. The stack itself is not modified.
template <NormalizableStack S>
NormalizationStats compute_normalization(const S& stack,
                                         std::span<const Tensor<typename S::Scalar>> calibration) {
  using T = typename S::Scalar;
  if (calibration.empty()) throw ContractError("compute_normalization: empty calibration set");
  S work = stack;
  std::vector<Tensor<T>> cur(calibration.begin(), calibration.end());
  NormalizationStats stats;
  for (std::size_t l = 0; l < work.conv_count(); ++l) {
    const std::size_t cout = work.filter_weights(l).shape().back();
    std::vector<double> sums(cout, 0.0);
    std::size_t positions = 0;
    for (auto& x : cur) {
      const Tensor<T> act = work.stage(l, x);
      const auto s = detail::channel_sums(act);
      for (std::size_t i = 0; i < cout; ++i) sums[i] += s[i];
      positions = act.size() / cout;
    }
    std::vector<double> mean(cout);
    const double count = static_cast<double>(positions) * static_cast<double>(cur.size());
    for (std::size_t i = 0; i < cout; ++i) mean[i] = sums[i] / count;
    for (std::size_t i = 0; i < cout; ++i) {
      if (mean[i] > 0.0) detail::scale_filter(work.filter_weights(l), work.filter_bias(l), i, mean[i]);
    }
    if (l + 1 < work.conv_count()) {
      for (auto& x : cur) x = work.stage(l, x);
    }
    stats.scales.push_back(std::move(mean));
    stats.positions.push_back(positions);
  }
  return stats;
}

template <NormalizableStack S>
NormalizationStats normalize_stack(S& stack,
                                   std::span<const Tensor<typename S::Scalar>> calibration) {
  NormalizationStats stats = compute_normalization(stack, calibration);
  apply_normalization(stack, stats);
  return stats;
}

}  // namespace scrl
