#include "scrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "scrl/errors.hpp"

namespace scrl {

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("lr must be >= 0");
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (batch_size < 2) throw ContractError("batch_size must be >= 2");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must be in [0, 1)");
  if (!(rms_decay >= 0.0 && rms_decay < 1.0)) throw ContractError("rms_decay must be in [0, 1)");
  if (!(rms_eps > 0.0)) throw ContractError("rms_eps must be > 0");
  if (dilation_override && *dilation_override == 0) {
    throw ContractError("dilation_override must be >= 1");
  }
  if (hidden_dim == 0 || embed_dim == 0) throw ContractError("head dimensions must be positive");
  if (calibration_size == 0) throw ContractError("calibration_size must be >= 1");
  if (!(convergence_tol >= 0.0)) throw ContractError("convergence_tol must be >= 0");
  if (convergence_patience == 0) throw ContractError("convergence_patience must be >= 1");
  loss.validate();
  mfcc().validate();
}

MfccConfig TrainConfig::mfcc() const {
  MfccConfig m;
  m.target_frames = mfcc_frames;
  return m;
}

std::size_t TrainConfig::voice_input_length() const { return mfcc().flat_length(); }

RmsPropConfig rmsprop_config(const TrainConfig& cfg) {
  return RmsPropConfig{cfg.lr, cfg.weight_decay, cfg.momentum, cfg.rms_decay, cfg.rms_eps};
}

// ----------------------------------------------------------------- model

namespace {

template <typename L>
void push_pair(std::vector<ParamRef<float>>& out, const std::string& name, L& layer) {
  out.push_back({name + ".weight", &layer.weights, true});
  out.push_back({name + ".bias", &layer.bias, false});
}

void push_head(std::vector<ParamRef<float>>& out, const std::string& name,
               ProjectionHead<float>& head) {
  for (std::size_t i = 0; i < head.layers.size(); ++i) {
    push_pair(out, name + ".fc" + std::to_string(i), head.layers[i]);
  }
}

DenseLayer<float> zero_dense(std::size_t in, std::size_t out, Activation act) {
  return DenseLayer<float>{Tensor<float>(Shape{in, out}), Tensor<float>(Shape{out}), act};
}

ProjectionHead<float> zero_head(Modality m, std::size_t in, std::size_t hidden, std::size_t out) {
  const Activation act = m == Modality::kImage ? Activation::kRelu : Activation::kTanh;
  ProjectionHead<float> h;
  h.modality = m;
  h.layers[0] = zero_dense(in, hidden, act);
  h.layers[1] = zero_dense(hidden, hidden, act);
  h.layers[2] = zero_dense(hidden, out, act);
  return h;
}

void zero_all(std::vector<ParamRef<float>> params) {
  for (auto& p : params) std::fill(p.tensor->data().begin(), p.tensor->data().end(), 0.0f);
}

VoiceEncoder<float> voice_encoder_for(const TrainConfig& cfg, Rng& rng) {
  auto enc = make_voice_encoder<float>(VoiceEncoderConfig{cfg.voice_input_length(), true}, rng);
  if (cfg.dilation_override) {
    for (auto& c : enc.convs) c.dilation = *cfg.dilation_override;
  }
  return enc;
}

std::string rng_text(const Rng& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

Rng rng_from_text(const std::string& text) {
  Rng rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw FormatError("unreadable RNG state");
  return rng;
}

// Rethrows with the record id prefixed, preserving the error class.
template <typename F>
auto with_record(const std::string& id, F&& f) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError("record " + id + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("record " + id + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError("record " + id + ": " + e.what());
  }
}

Tensor<float> gather_rows(const Tensor<float>& src, std::span<const std::size_t> rows) {
  const std::size_t width = src.dim(1);
  Tensor<float> out(Shape{rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return out;
}

}  // namespace

std::vector<ParamRef<float>> trainable_params(Model& m) {
  std::vector<ParamRef<float>> out;
  for (std::size_t i = 0; i < m.voice_encoder.convs.size(); ++i) {
    push_pair(out, "voice_encoder.conv" + std::to_string(i), m.voice_encoder.convs[i]);
  }
  push_head(out, "image_head", m.image_head);
  push_head(out, "voice_head", m.voice_head);
  push_pair(out, "classifier.image", m.classifiers.image);
  push_pair(out, "classifier.voice", m.classifiers.voice);
  return out;
}

std::vector<ParamRef<float>> frozen_params(Model& m) {
  std::vector<ParamRef<float>> out;
  for (std::size_t i = 0; i < m.backbone.convs.size(); ++i) {
    push_pair(out, "backbone.conv" + std::to_string(i), m.backbone.convs[i]);
  }
  return out;
}

Model model_skeleton(const TrainConfig& cfg, std::size_t classes) {
  cfg.validate();
  if (classes == 0) throw ContractError("model needs at least one class");
  Rng rng(0);
  Model m;
  if (cfg.image_source == ImageSource::kTinyCnn) m.backbone = make_tiny_cnn<float>(rng);
  m.voice_encoder = voice_encoder_for(cfg, rng);
  const std::size_t flat = m.voice_encoder.feature_length();
  m.image_head = zero_head(Modality::kImage, kImagePooledDim, cfg.hidden_dim, cfg.embed_dim);
  m.voice_head = zero_head(Modality::kVoice, flat, cfg.hidden_dim, cfg.embed_dim);
  m.classifiers.image = zero_dense(cfg.embed_dim, classes, Activation::kSoftmax);
  m.classifiers.voice = zero_dense(cfg.embed_dim, classes, Activation::kSoftmax);
  zero_all(trainable_params(m));
  zero_all(frozen_params(m));
  return m;
}

// -------------------------------------------------------------- features

std::vector<std::size_t> calibration_indices(std::size_t n, std::size_t count) {
  if (n == 0) throw ContractError("calibration set drawn from an empty dataset");
  count = std::min(count, n);
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i * n / count;
  return idx;
}

TinyCnn<float> make_backbone(const Manifest& m, const TrainConfig& cfg) {
  Rng rng(cfg.backbone_seed);
  TinyCnn<float> net = make_tiny_cnn<float>(rng);
  std::vector<Tensor<float>> calib;
  for (std::size_t i : calibration_indices(m.size(), cfg.calibration_size)) {
    const auto& r = m.records[i];
    calib.push_back(with_record(r.id, [&] { return center_image(read_image(r.image_path)); }));
  }
  normalize_stack(net, std::span<const Tensor<float>>(calib));
  return net;
}

FeatureSet extract_features(const Manifest& m, const TinyCnn<float>& backbone,
                            const TrainConfig& cfg) {
  const MfccConfig mfcc = cfg.mfcc();
  const std::size_t vlen = mfcc.flat_length();
  const bool cnn = cfg.image_source == ImageSource::kTinyCnn;
  if (cnn && backbone.convs.empty()) throw ContractError("extract_features: empty backbone");
  const ImageFeatureProvider provider =
      cnn ? ImageFeatureProvider::tiny_cnn(backbone) : ImageFeatureProvider::precomputed();

  FeatureSet f;
  f.image = Tensor<float>(Shape{m.size(), kImagePooledDim});
  f.voice = Tensor<float>(Shape{m.size(), vlen});
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m.records[i];
    f.ids.push_back(r.id);
    f.labels.push_back(r.label);
    const Tensor<float> pooled =
        with_record(r.id, [&] { return pool_image_feature(provider.feature(r.image_path)); });
    std::copy(pooled.data().begin(), pooled.data().end(),
              f.image.data().begin() + static_cast<std::ptrdiff_t>(i * kImagePooledDim));
    const Tensor<double> v = with_record(r.id, [&] { return voice_input_from_wav(r.voice_path, mfcc); });
    if (v.size() != vlen) {
      throw ShapeError("record " + r.id + ": voice input has " + std::to_string(v.size()) +
                       " values, expected " + std::to_string(vlen));
    }
    auto dst = f.voice.data().begin() + static_cast<std::ptrdiff_t>(i * vlen);
    for (double x : v.data()) *dst++ = static_cast<float>(x);
  }
  return f;
}

// ------------------------------------------------------------- optimizer

template <typename T>
OptimizerState<T> make_optimizer_state(std::span<const ParamRef<T>> params) {
  OptimizerState<T> s;
  for (const auto& p : params) {
    s.slots.push_back({Tensor<T>(p.tensor->shape()), Tensor<T>(p.tensor->shape())});
  }
  return s;
}

template <typename T>
void rmsprop_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state,
                  const RmsPropConfig& cfg) {
  if (state.slots.size() != params.size()) {
    throw ContractError("rmsprop_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(state.slots.size()) + " optimizer slots");
  }
  const T lr = static_cast<T>(cfg.lr), wd = static_cast<T>(cfg.weight_decay);
  const T mu = static_cast<T>(cfg.momentum), a = static_cast<T>(cfg.rms_decay);
  const T one_minus_a = static_cast<T>(1.0 - cfg.rms_decay), eps = static_cast<T>(cfg.rms_eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& w = *params[k].tensor;
    auto& slot = state.slots[k];
    if (slot.cache.shape() != w.shape() || slot.velocity.shape() != w.shape()) {
      throw ContractError("rmsprop_step: optimizer slot for " + params[k].name + " is " +
                          shape_str(slot.cache.shape()) + ", parameter is " +
                          shape_str(w.shape()));
    }
    if (!w.requires_grad()) {
      throw ContractError("rmsprop_step: " + params[k].name + " has no gradient buffer");
    }
    const T decay = params[k].decay ? wd : T{0};
    auto wv = w.data();
    auto gv = w.grad();
    auto cv = slot.cache.data();
    auto vv = slot.velocity.data();
    for (std::size_t i = 0; i < wv.size(); ++i) {
      const T g = gv[i] + decay * wv[i];
      cv[i] = a * cv[i] + one_minus_a * (g * g);
      vv[i] = mu * vv[i] + lr * g / (std::sqrt(cv[i]) + eps);
      wv[i] -= vv[i];
    }
  }
}

template OptimizerState<float> make_optimizer_state<float>(std::span<const ParamRef<float>>);
template OptimizerState<double> make_optimizer_state<double>(std::span<const ParamRef<double>>);
template void rmsprop_step<float>(std::span<const ParamRef<float>>, OptimizerState<float>&,
                                  const RmsPropConfig&);
template void rmsprop_step<double>(std::span<const ParamRef<double>>, OptimizerState<double>&,
                                   const RmsPropConfig&);

// --------------------------------------------------------------- batches

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng) {
  if (batch_size < 2) throw ContractError("batch size must be >= 2");
  if (n < batch_size) {
    throw ContractError("dataset of " + std::to_string(n) + " is smaller than the batch size " +
                        std::to_string(batch_size));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size) {
    const std::size_t e = std::min(n, s + batch_size);
    if (e - s < 2) {
      out.back().insert(out.back().end(), perm.begin() + static_cast<std::ptrdiff_t>(s),
                        perm.end());
    } else {
      out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s),
                       perm.begin() + static_cast<std::ptrdiff_t>(e));
    }
  }
  return out;
}

// ----------------------------------------------------------------- train

Checkpoint initialize(const Manifest& train_set, const TrainConfig& cfg,
                      const FeatureSet* features) {
  cfg.validate();
  const std::size_t classes = train_set.class_count();
  if (train_set.size() < cfg.batch_size) {
    throw ContractError("training set of " + std::to_string(train_set.size()) +
                        " is smaller than the batch size " + std::to_string(cfg.batch_size));
  }
  if (classes < 2 && (cfg.loss.enable_intra || cfg.loss.enable_inter)) {
    throw ContractError("intra/inter losses need at least 2 classes");
  }
  Checkpoint ck;
  ck.config = cfg;
  Model& m = ck.model;
  if (cfg.image_source == ImageSource::kTinyCnn) m.backbone = make_backbone(train_set, cfg);

  FeatureSet own;
  if (!features) {
    own = extract_features(train_set, m.backbone, cfg);
    features = &own;
  }
  if (features->size() != train_set.size() || features->voice.dim(1) != cfg.voice_input_length()) {
    throw ContractError("initialize: feature set does not match the training set");
  }

  Rng rng(cfg.seed);
  m.voice_encoder = voice_encoder_for(cfg, rng);
  std::vector<Tensor<float>> calib;
  for (std::size_t i : calibration_indices(features->size(), cfg.calibration_size)) {
    calib.push_back(gather_rows(features->voice, std::span(&i, 1)).reshaped({cfg.voice_input_length()}));
  }
  normalize_stack(m.voice_encoder, std::span<const Tensor<float>>(calib));

  const std::uint64_t image_seed = rng(), voice_seed = rng(), class_seed = rng();
  m.image_head = make_projection_head<float>(
      Modality::kImage, HeadConfig{kImagePooledDim, cfg.hidden_dim, cfg.embed_dim},
      InitConfig{0.0, 2.0, image_seed});
  m.voice_head = make_projection_head<float>(
      Modality::kVoice, HeadConfig{m.voice_encoder.feature_length(), cfg.hidden_dim, cfg.embed_dim},
      InitConfig{0.0, 2.0, voice_seed});
  m.classifiers = make_classifier_heads<float>(cfg.embed_dim, classes, InitConfig{0.0, 2.0, class_seed});

  const auto params = trainable_params(m);
  ck.optimizer = make_optimizer_state<float>(params);
  ck.rng_state = rng_text(rng);
  return ck;
}

void train_epochs(Checkpoint& ck, const Manifest& train_set, const TrainOptions& opts) {
  const TrainConfig& cfg = ck.config;
  cfg.validate();
  if (train_set.class_count() > ck.model.classes()) {
    throw ContractError("training labels exceed the model's " +
                        std::to_string(ck.model.classes()) + " classes");
  }
  FeatureSet own;
  const FeatureSet* f = opts.features;
  if (!f) {
    own = extract_features(train_set, ck.model.backbone, cfg);
    f = &own;
  }
  if (f->size() != train_set.size()) {
    throw ContractError("train: feature set does not match the training set");
  }

  Model& m = ck.model;
  const auto params = trainable_params(m);
  if (ck.optimizer.slots.size() != params.size()) {
    throw ContractError("train: optimizer state does not match the model");
  }
  for (const auto& p : params) p.tensor->set_requires_grad(true);
  const RmsPropConfig rms = rmsprop_config(cfg);
  Rng rng = rng_from_text(ck.rng_state);

  while (!ck.converged && ck.epoch < cfg.epochs) {
    if (opts.stop_after_epoch && ck.epoch >= *opts.stop_after_epoch) break;
    const auto batches = epoch_batches(f->size(), cfg.batch_size, rng);
    EpochRecord rec;
    rec.epoch = ck.epoch + 1;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      std::vector<std::size_t> labels(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) labels[r] = f->labels[idx[r]];

      Graph<float> g;
      NodeId xi = g.input(gather_rows(f->image, idx));
      NodeId xv = g.input(gather_rows(f->voice, idx));
      NodeId phi_v = project_voice(g, voice_encode(g, xv, m.voice_encoder), m.voice_head);
      NodeId phi_i = project_image(g, xi, m.image_head);
      const LossBreakdown t = joint_loss_terms(g, phi_i, phi_v, labels, m.classifiers, cfg.loss);
      const double loss = static_cast<double>(g.value(t.total)[0]);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << rec.epoch << ", batch " << bi + 1 << ": total "
            << loss << ", pair " << t.pair << ", intra " << t.intra << ", inter " << t.inter
            << ", class " << t.cls;
        throw NumericError(msg.str());
      }
      if (g.needs_grad(t.total)) g.backward(t.total);
      rmsprop_step<float>(params, ck.optimizer, rms);
      for (const auto& p : params) p.tensor->zero_grad();

      rec.loss += loss;
      rec.pair += t.pair;
      rec.intra += t.intra;
      rec.inter += t.inter;
      rec.cls += t.cls;
    }
    const double nb = static_cast<double>(batches.size());
    rec.loss /= nb;
    rec.pair /= nb;
    rec.intra /= nb;
    rec.inter /= nb;
    rec.cls /= nb;

    if (!ck.history.empty()) {
      const double improvement = ck.history.back().loss - rec.loss;
      ck.stall_epochs = improvement < cfg.convergence_tol ? ck.stall_epochs + 1 : 0;
    }
    ck.history.push_back(rec);
    ck.epoch = rec.epoch;
    ck.rng_state = rng_text(rng);
    ck.converged = ck.stall_epochs >= cfg.convergence_patience;
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  for (const auto& p : params) p.tensor->set_requires_grad(false);
}

Checkpoint train(const Manifest& train_set, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  FeatureSet own;
  const FeatureSet* f = opts.features;
  if (!f) {
    const TinyCnn<float> backbone = cfg.image_source == ImageSource::kTinyCnn
                                        ? make_backbone(train_set, cfg)
                                        : TinyCnn<float>{};
    own = extract_features(train_set, backbone, cfg);
    f = &own;
  }
  Checkpoint ck = initialize(train_set, cfg, f);
  TrainOptions o = opts;
  o.features = f;
  train_epochs(ck, train_set, o);
  return ck;
}

// ------------------------------------------------------------- embedding

Embeddings embed_features(const FeatureSet& f, const Model& m) {
  const std::size_t n = f.size(), d = m.image_head.out_dim();
  Embeddings e{Tensor<float>(Shape{n, d}), Tensor<float>(Shape{n, d})};
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < n; s += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, n - s));
    std::iota(idx.begin(), idx.end(), s);
    Graph<float> g;
    const Tensor<float>& pi = g.value(project_image(g, g.input(gather_rows(f.image, idx)), m.image_head));
    std::copy(pi.data().begin(), pi.data().end(),
              e.image.data().begin() + static_cast<std::ptrdiff_t>(s * d));
    NodeId fv = voice_encode(g, g.input(gather_rows(f.voice, idx)), m.voice_encoder);
    const Tensor<float>& pv = g.value(project_voice(g, fv, m.voice_head));
    std::copy(pv.data().begin(), pv.data().end(),
              e.voice.data().begin() + static_cast<std::ptrdiff_t>(s * d));
  }
  return e;
}

}  // namespace scrl
