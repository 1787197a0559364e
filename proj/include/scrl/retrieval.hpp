#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scrl/representation.hpp"
#include "scrl/tensor.hpp"
#include "scrl/trainer.hpp"

namespace scrl {

enum class Protocol { kImageToVoice, kVoiceToImage };

// "i2v" / "v2i".
const char* protocol_name(Protocol p);
Protocol parse_protocol(const std::string& s);

// Parallel arrays of N samples; reps are [N x d].
struct EmbeddingCorpus {
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  Tensor<double> image_reps;
  Tensor<double> voice_reps;

  std::size_t size() const { return ids.size(); }
  // Throws ShapeError when the arrays disagree.
  void validate() const;
};

// Full pipeline for every record of m under ck.
EmbeddingCorpus embed_corpus(const Manifest& m, const Checkpoint& ck);
EmbeddingCorpus embed_corpus(const FeatureSet& f, const Model& model);

struct RankedEntry {
  std::size_t index;  // row in the target set
  double distance;
  bool relevant;
};

struct RankedResult {
  std::string query_id;
  Protocol protocol = Protocol::kImageToVoice;
  std::vector<RankedEntry> entries;  // distance ascending, ties by id ascending

  std::size_t relevant_count() const;
};

// One modality's rows as retrieval targets.
struct TargetSet {
  std::span<const std::string> ids;
  std::span<const std::size_t> labels;
  const Tensor<double>* reps = nullptr;  // [M x d]
  Modality modality = Modality::kVoice;
};

struct Query {
  std::string id;
  std::size_t label = 0;
  std::span<const double> rep;
  Modality modality = Modality::kImage;
};

// Ranks every target by cosine distance. A target is skipped only when it
// shares both id and modality with the query. Throws ContractError when no
// target remains.
RankedResult rank(const Query& q, const TargetSet& targets, Protocol protocol);

// Full-list AP; nullopt when no target is relevant.
std::optional<double> average_precision(const RankedResult& r);

// 1 <= k <= entries.size(), else ContractError.
double precision_at_k(const RankedResult& r, std::size_t k);

// All queries of one protocol, ranked.
std::vector<RankedResult> rank_all(const EmbeddingCorpus& c, Protocol p);

struct ProtocolMetrics {
  Protocol protocol = Protocol::kImageToVoice;
  double map = 0.0;
  std::vector<std::pair<std::size_t, double>> precision_at;  // (k, mean P@k)
  std::vector<double> curve;                                 // mean P@k for k = 1..k_max
  std::size_t queries = 0;
  std::size_t excluded = 0;  // queries without a relevant target
};

// Queries lacking a relevant target are left out of every mean; warn, when
// set, receives one line per such query.
ProtocolMetrics evaluate(const EmbeddingCorpus& c, Protocol p, std::span<const std::size_t> ks,
                         std::size_t k_max,
                         const std::function<void(const std::string&)>& warn = {});

double mean_ap(const EmbeddingCorpus& c, Protocol p);
std::vector<std::pair<std::size_t, double>> precision_curve(const EmbeddingCorpus& c, Protocol p,
                                                            std::size_t k_max);

// protocol,metric,k,value rows; k is empty for mAP.
std::string metrics_csv(std::span<const ProtocolMetrics> report);
// k,precision rows.
std::string curve_csv(const ProtocolMetrics& m);
std::vector<std::pair<std::size_t, double>> parse_curve_csv(const std::string& text);
// key=value lines such as i2v.mAP=0.93.
std::string metrics_summary(std::span<const ProtocolMetrics> report);

}  // namespace scrl
