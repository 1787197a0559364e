#include "scrl/encoders.hpp"

#include "scrl/data_io.hpp"
#include "scrl/errors.hpp"

namespace scrl {

// ------------------------------------------------------------ voice encoder

template <typename T>
std::size_t VoiceEncoder<T>::output_length() const {
  std::size_t len = input_length;
  for (std::size_t l = 0; l < kConvs; ++l) {
    if (l == 3) len = same_out_len(len, kPoolStride);
    len = same_out_len(len, convs[l].stride);
  }
  return same_out_len(len, kPoolStride);
}

template <typename T>
Tensor<T> VoiceEncoder<T>::stage(std::size_t l, const Tensor<T>& x) const {
  if (l >= kConvs) throw ContractError("voice encoder has no conv layer " + std::to_string(l));
  Graph<T> g;
  NodeId h = g.input(x.rank() == 1 ? x.reshaped(Shape{x.size(), 1}) : x);
  if (l == 3) h = g.max_pool1d(h, kPoolWindow, kPoolStride);
  return g.value(g.relu(conv1d_dilated(g, h, convs[l])));
}

template <typename T>
VoiceEncoder<T> make_voice_encoder(const VoiceEncoderConfig& cfg, Rng& rng) {
  if (cfg.input_length == 0) throw ContractError("voice encoder input length must be positive");
  VoiceEncoder<T> enc;
  enc.input_length = cfg.input_length;
  std::size_t cin = 1;
  const InitConfig init{};
  for (std::size_t l = 0; l < VoiceEncoder<T>::kConvs; ++l) {
    const auto& geo = kVoiceConvs[l];
    auto& layer = enc.convs[l];
    layer.weights = Tensor<T>(Shape{geo.kernel, cin, geo.out_channels});
    init_truncated_normal(layer.weights, geo.kernel * cin, init, rng);
    layer.bias = Tensor<T>(Shape{geo.out_channels});
    layer.stride = geo.stride;
    layer.dilation = cfg.dilated ? geo.dilation : 1;
    cin = geo.out_channels;
  }
  return enc;
}

template <typename T, typename E>
  requires LayerRef<E, VoiceEncoder<T>>
NodeId voice_encode(Graph<T>& g, NodeId x, E& enc) {
  const Tensor<T>& in = g.value(x);
  if (in.rank() != 2 || in.dim(1) != enc.input_length) {
    throw ShapeError("voice encoder expects [B x " + std::to_string(enc.input_length) + "], got " +
                     shape_str(in.shape()));
  }
  const std::size_t batch = in.dim(0);
  constexpr std::size_t kWindow = VoiceEncoder<T>::kPoolWindow;
  constexpr std::size_t kStride = VoiceEncoder<T>::kPoolStride;
  NodeId h = g.reshape(x, Shape{batch, enc.input_length, 1});
  for (std::size_t l = 0; l < VoiceEncoder<T>::kConvs; ++l) {
    if (l == 3) h = g.max_pool1d(h, kWindow, kStride);
    h = g.relu(conv1d_dilated(g, h, enc.convs[l]));
  }
  h = g.max_pool1d(h, kWindow, kStride);
  return g.reshape(h, Shape{batch, enc.feature_length()});
}

template <typename T>
Tensor<T> voice_encode(const Tensor<T>& v, const VoiceEncoder<T>& enc) {
  if (v.rank() != 1 || v.size() != enc.input_length) {
    throw ShapeError("voice encoder expects a length-" + std::to_string(enc.input_length) +
                     " vector, got " + shape_str(v.shape()));
  }
  Graph<T> g;
  NodeId y = voice_encode(g, g.input(v.reshaped(Shape{1, v.size()})), enc);
  return g.value(y).reshaped(Shape{enc.output_length(), 1, VoiceEncoder<T>::kOutChannels});
}

// --------------------------------------------------------------- image CNN

template <typename T>
Tensor<T> TinyCnn<T>::stage(std::size_t l, const Tensor<T>& x) const {
  Graph<T> g;
  return g.value(g.relu(conv2d(g, g.input(x), convs.at(l))));
}

template <typename T>
TinyCnn<T> make_tiny_cnn(Rng& rng, std::span<const std::size_t> channels, std::size_t kernel,
                         std::size_t stride) {
  if (channels.size() < 2) throw ContractError("tiny cnn needs at least one conv layer");
  TinyCnn<T> net;
  const InitConfig init{};
  for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
    ConvLayer2D<T> layer{Tensor<T>(Shape{kernel, kernel, channels[i], channels[i + 1]}),
                         Tensor<T>(Shape{channels[i + 1]}), stride};
    init_truncated_normal(layer.weights, kernel * kernel * channels[i], init, rng);
    net.convs.push_back(std::move(layer));
  }
  return net;
}

template <typename T>
Tensor<T> tiny_cnn_forward(const Tensor<T>& image, const TinyCnn<T>& net) {
  Graph<T> g;
  return g.value(tiny_cnn_forward(g, g.input(image), net));
}

// ------------------------------------------------------- image features

ImageFeatureProvider ImageFeatureProvider::precomputed() { return ImageFeatureProvider{}; }

ImageFeatureProvider ImageFeatureProvider::tiny_cnn(TinyCnn<float> net) {
  ImageFeatureProvider p;
  p.mode_ = ImageProviderMode::kTinyCnn;
  p.net_ = std::move(net);
  return p;
}

const TinyCnn<float>& ImageFeatureProvider::net() const {
  if (mode_ != ImageProviderMode::kTinyCnn) throw ContractError("image provider has no network");
  return net_;
}

TinyCnn<float>& ImageFeatureProvider::net() {
  if (mode_ != ImageProviderMode::kTinyCnn) throw ContractError("image provider has no network");
  return net_;
}

namespace {

const Shape kFeatureShape{kImageFeatureSide, kImageFeatureSide, kImageFeatureChannels};

}  // namespace

Tensor<float> ImageFeatureProvider::feature(const std::filesystem::path& path) const {
  if (mode_ == ImageProviderMode::kTinyCnn) return feature(read_image(path));
  Tensor<float> f = read_tensor<float>(path);
  if (f.shape() != kFeatureShape) {
    throw FormatError(path.string() + ": stored feature shape " + shape_str(f.shape()) +
                      ", expected " + shape_str(kFeatureShape));
  }
  return f;
}

Tensor<float> center_image(Tensor<float> image) {
  for (float& v : image.data()) v -= kImageMeanPixel;
  return image;
}

Tensor<float> ImageFeatureProvider::feature(const Tensor<float>& image) const {
  if (mode_ != ImageProviderMode::kTinyCnn) {
    throw ContractError("precomputed image provider cannot encode raw images");
  }
  const Shape want{kImageSide, kImageSide, 3};
  if (image.shape() != want) {
    throw ShapeError("tiny cnn expects " + shape_str(want) + ", got " + shape_str(image.shape()));
  }
  Tensor<float> f = tiny_cnn_forward(center_image(image), net_);
  if (f.shape() != kFeatureShape) {
    throw ContractError("tiny cnn produces " + shape_str(f.shape()) + ", expected " +
                        shape_str(kFeatureShape));
  }
  return f;
}

// ------------------------------------------------------ instantiations

#define SCRL_ENCODERS_INSTANTIATE(T)                                                          \
  template struct VoiceEncoder<T>;                                                           \
  template struct TinyCnn<T>;                                                                \
  template VoiceEncoder<T> make_voice_encoder<T>(const VoiceEncoderConfig&, Rng&);           \
  template NodeId voice_encode<T, VoiceEncoder<T>>(Graph<T>&, NodeId, VoiceEncoder<T>&);     \
  template NodeId voice_encode<T, const VoiceEncoder<T>>(Graph<T>&, NodeId,                  \
                                                         const VoiceEncoder<T>&);            \
  template Tensor<T> voice_encode<T>(const Tensor<T>&, const VoiceEncoder<T>&);              \
  template TinyCnn<T> make_tiny_cnn<T>(Rng&, std::span<const std::size_t>, std::size_t,      \
                                       std::size_t);                                         \
  template Tensor<T> tiny_cnn_forward<T>(const Tensor<T>&, const TinyCnn<T>&);

SCRL_ENCODERS_INSTANTIATE(float)
SCRL_ENCODERS_INSTANTIATE(double)

#undef SCRL_ENCODERS_INSTANTIATE

}  // namespace scrl
