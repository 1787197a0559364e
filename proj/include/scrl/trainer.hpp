#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scrl/audio.hpp"
#include "scrl/data_io.hpp"
#include "scrl/encoders.hpp"
#include "scrl/init.hpp"
#include "scrl/losses.hpp"
#include "scrl/representation.hpp"
#include "scrl/tensor.hpp"

namespace scrl {

enum class ImageSource { kTinyCnn, kPrecomputed };

struct TrainConfig {
  double lr = 0.0004;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  double rms_decay = 0.9;
  double rms_eps = 1e-8;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::optional<std::size_t> dilation_override;

  // Model and pipeline geometry.
  std::size_t hidden_dim = kEmbedDim;
  std::size_t embed_dim = kEmbedDim;
  std::size_t mfcc_frames = 2000;
  ImageSource image_source = ImageSource::kTinyCnn;
  // The frozen backbone stands in for fixed pretrained weights, so it is
  // drawn from its own seed rather than the training seed.
  std::uint64_t backbone_seed = 1;
  std::size_t calibration_size = 16;

  // Stop once the epoch loss improves by less than convergence_tol for
  // convergence_patience consecutive epochs.
  double convergence_tol = 1e-5;
  std::size_t convergence_patience = 5;

  // Throws ContractError: lr > 0, batch_size >= 2, epochs >= 1, and so on.
  void validate() const;

  MfccConfig mfcc() const;
  std::size_t voice_input_length() const;
};

// ---------------------------------------------------------------- model

// Everything a checkpoint carries besides optimizer and loop state. The
// backbone is frozen and empty when image features are precomputed.
struct Model {
  TinyCnn<float> backbone;
  VoiceEncoder<float> voice_encoder;
  ProjectionHead<float> image_head;
  ProjectionHead<float> voice_head;
  ClassifierHeads<float> classifiers;

  std::size_t classes() const { return classifiers.classes(); }
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool decay;  // weight decay applies to weights, not biases
};

// Trainable tensors in a fixed order: voice encoder, image head, voice head,
// classifiers.
std::vector<ParamRef<float>> trainable_params(Model& m);
// Frozen backbone tensors.
std::vector<ParamRef<float>> frozen_params(Model& m);

// Zero-filled model whose shapes follow the config; used to receive loaded
// tensors.
Model model_skeleton(const TrainConfig& cfg, std::size_t classes);

// ------------------------------------------------------------- features

// Per-sample encoder inputs: pooled backbone features and MFCC voice inputs.
struct FeatureSet {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  Tensor<float> image;  // [N x 512]
  Tensor<float> voice;  // [N x voice_input_length]

  std::size_t size() const { return ids.size(); }
};

// Reads every record through the backbone (or precomputed SCRLT maps) and
// the MFCC front end. Errors name the offending record id.
FeatureSet extract_features(const Manifest& m, const TinyCnn<float>& backbone,
                            const TrainConfig& cfg);

// Evenly spaced calibration indices i * n / count.
std::vector<std::size_t> calibration_indices(std::size_t n, std::size_t count);

// Backbone from backbone_seed, normalized on calibration images of m.
TinyCnn<float> make_backbone(const Manifest& m, const TrainConfig& cfg);

// ------------------------------------------------------------ optimizer

template <typename T>
struct OptimizerSlot {
  Tensor<T> cache;     // running mean of squared gradients, >= 0
  Tensor<T> velocity;  // momentum buffer
};

template <typename T>
struct OptimizerState {
  std::vector<OptimizerSlot<T>> slots;
};

struct RmsPropConfig {
  double lr = 0.0004;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  double rms_decay = 0.9;
  double rms_eps = 1e-8;
};

RmsPropConfig rmsprop_config(const TrainConfig& cfg);

template <typename T>
OptimizerState<T> make_optimizer_state(std::span<const ParamRef<T>> params);

// g' = g + wd w (decayed tensors only); cache = a cache + (1 - a) g'^2;
// v = mu v + lr g' / (sqrt(cache) + eps); w -= v.
// Gradients are read from each tensor's grad buffer and left untouched.
template <typename T>
void rmsprop_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state,
                  const RmsPropConfig& cfg);

// --------------------------------------------------------------- batches

// One epoch: a fresh shuffle, then consecutive slices of batch_size. A tail
// shorter than 2 joins the previous batch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng);

// ----------------------------------------------------------- checkpoint

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double pair = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double cls = 0.0;
};

struct Checkpoint {
  TrainConfig config;
  Model model;
  OptimizerState<float> optimizer;
  std::size_t epoch = 0;  // completed epochs
  std::string rng_state;
  std::size_t stall_epochs = 0;
  bool converged = false;
  std::vector<EpochRecord> history;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------- train

struct TrainOptions {
  // Returns after this many completed epochs, leaving a resumable state.
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const EpochRecord&)> on_epoch;
  // Features extracted with the checkpoint's backbone; computed when absent.
  const FeatureSet* features = nullptr;
};

// Fresh model: backbone, voice encoder normalized on calibration voices,
// heads from the seed. Epoch 0, zero optimizer state.
Checkpoint initialize(const Manifest& train_set, const TrainConfig& cfg,
                      const FeatureSet* features = nullptr);

// Continues ckpt until config.epochs, convergence, or stop_after_epoch.
// Throws NumericError naming epoch, batch and term values on a non-finite
// loss.
void train_epochs(Checkpoint& ckpt, const Manifest& train_set, const TrainOptions& opts = {});

Checkpoint train(const Manifest& train_set, const TrainConfig& cfg, const TrainOptions& opts = {});

// ------------------------------------------------------------ embedding

// phi_I and phi_V for a feature set, in batches; float precision.
struct Embeddings {
  Tensor<float> image;  // [N x embed_dim]
  Tensor<float> voice;
};

Embeddings embed_features(const FeatureSet& f, const Model& m);

}  // namespace scrl
