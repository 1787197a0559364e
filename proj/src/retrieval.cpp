#include "scrl/retrieval.hpp"

#include <algorithm>
#include <sstream>

#include "scrl/config.hpp"
#include "scrl/errors.hpp"
#include "scrl/losses.hpp"

namespace scrl {

const char* protocol_name(Protocol p) { return p == Protocol::kImageToVoice ? "i2v" : "v2i"; }

Protocol parse_protocol(const std::string& s) {
  if (s == "i2v") return Protocol::kImageToVoice;
  if (s == "v2i") return Protocol::kVoiceToImage;
  throw ContractError("unknown protocol '" + s + "' (expected i2v or v2i)");
}

void EmbeddingCorpus::validate() const {
  const std::size_t n = ids.size();
  if (labels.size() != n || image_reps.rank() != 2 || voice_reps.rank() != 2 ||
      image_reps.dim(0) != n || voice_reps.dim(0) != n ||
      image_reps.dim(1) != voice_reps.dim(1)) {
    throw ShapeError("embedding corpus arrays disagree: " + std::to_string(n) + " ids, " +
                     std::to_string(labels.size()) + " labels, image " +
                     shape_str(image_reps.shape()) + ", voice " + shape_str(voice_reps.shape()));
  }
}

EmbeddingCorpus embed_corpus(const FeatureSet& f, const Model& model) {
  const Embeddings e = embed_features(f, model);
  EmbeddingCorpus c{f.ids, f.labels, e.image.cast<double>(), e.voice.cast<double>()};
  c.validate();
  return c;
}

EmbeddingCorpus embed_corpus(const Manifest& m, const Checkpoint& ck) {
  return embed_corpus(extract_features(m, ck.model.backbone, ck.config), ck.model);
}

std::size_t RankedResult::relevant_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const RankedEntry& e) { return e.relevant; }));
}

RankedResult rank(const Query& q, const TargetSet& t, Protocol protocol) {
  if (t.ids.empty()) throw ContractError("rank: empty target set for query " + q.id);
  if (!t.reps || t.reps->rank() != 2 || t.reps->dim(0) != t.ids.size() ||
      t.labels.size() != t.ids.size()) {
    throw ShapeError("rank: target arrays disagree");
  }
  const std::size_t m = t.ids.size(), d = t.reps->dim(1);
  if (q.rep.size() != d) {
    throw ShapeError("rank: query has " + std::to_string(q.rep.size()) + " values, targets " +
                     std::to_string(d));
  }
  RankedResult r;
  r.query_id = q.id;
  r.protocol = protocol;
  r.entries.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (t.modality == q.modality && t.ids[j] == q.id) continue;
    const std::span<const double> row = t.reps->data().subspan(j * d, d);
    r.entries.push_back({j, cosine_distance<double>(q.rep, row), t.labels[j] == q.label});
  }
  if (r.entries.empty()) throw ContractError("rank: empty target set for query " + q.id);
  std::sort(r.entries.begin(), r.entries.end(), [&](const RankedEntry& a, const RankedEntry& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (t.ids[a.index] != t.ids[b.index]) return t.ids[a.index] < t.ids[b.index];
    return a.index < b.index;
  });
  return r;
}

std::optional<double> average_precision(const RankedResult& r) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < r.entries.size(); ++k) {
    if (!r.entries[k].relevant) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

double precision_at_k(const RankedResult& r, std::size_t k) {
  if (k < 1 || k > r.entries.size()) {
    throw ContractError("precision_at_k: k = " + std::to_string(k) + " outside [1, " +
                        std::to_string(r.entries.size()) + "]");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += r.entries[i].relevant ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::vector<RankedResult> rank_all(const EmbeddingCorpus& c, Protocol p) {
  c.validate();
  const bool i2v = p == Protocol::kImageToVoice;
  const Tensor<double>& queries = i2v ? c.image_reps : c.voice_reps;
  const TargetSet targets{c.ids, c.labels, i2v ? &c.voice_reps : &c.image_reps,
                          i2v ? Modality::kVoice : Modality::kImage};
  const std::size_t d = queries.dim(1);
  std::vector<RankedResult> out;
  out.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Query q{c.ids[i], c.labels[i], queries.data().subspan(i * d, d),
                  i2v ? Modality::kImage : Modality::kVoice};
    out.push_back(rank(q, targets, p));
  }
  return out;
}

ProtocolMetrics evaluate(const EmbeddingCorpus& c, Protocol p, std::span<const std::size_t> ks,
                         std::size_t k_max, const std::function<void(const std::string&)>& warn) {
  const auto ranked = rank_all(c, p);
  ProtocolMetrics m;
  m.protocol = p;
  m.queries = ranked.size();
  if (ranked.empty()) throw ContractError("evaluate: empty corpus");
  const std::size_t targets = ranked.front().entries.size();
  for (std::size_t k : ks) {
    if (k < 1 || k > targets) {
      throw ContractError("evaluate: k = " + std::to_string(k) + " outside [1, " +
                          std::to_string(targets) + "]");
    }
  }
  if (k_max > targets) {
    throw ContractError("evaluate: curve length " + std::to_string(k_max) + " exceeds " +
                        std::to_string(targets) + " targets");
  }
  std::vector<double> pk(ks.size(), 0.0);
  m.curve.assign(k_max, 0.0);
  std::size_t used = 0;
  for (const auto& r : ranked) {
    const auto ap = average_precision(r);
    if (!ap) {
      ++m.excluded;
      if (warn) {
        warn(std::string(protocol_name(p)) + ": query " + r.query_id +
             " has no relevant target; excluded");
      }
      continue;
    }
    ++used;
    m.map += *ap;
    std::size_t hits = 0;
    for (std::size_t k = 1; k <= k_max; ++k) {
      hits += r.entries[k - 1].relevant ? 1 : 0;
      m.curve[k - 1] += static_cast<double>(hits) / static_cast<double>(k);
    }
    for (std::size_t i = 0; i < ks.size(); ++i) pk[i] += precision_at_k(r, ks[i]);
  }
  if (used == 0) throw ContractError("evaluate: no query has a relevant target");
  const double n = static_cast<double>(used);
  m.map /= n;
  for (double& v : m.curve) v /= n;
  for (std::size_t i = 0; i < ks.size(); ++i) m.precision_at.emplace_back(ks[i], pk[i] / n);
  return m;
}

double mean_ap(const EmbeddingCorpus& c, Protocol p) { return evaluate(c, p, {}, 0).map; }

std::vector<std::pair<std::size_t, double>> precision_curve(const EmbeddingCorpus& c, Protocol p,
                                                            std::size_t k_max) {
  const ProtocolMetrics m = evaluate(c, p, {}, k_max);
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t k = 1; k <= k_max; ++k) out.emplace_back(k, m.curve[k - 1]);
  return out;
}

std::string metrics_csv(std::span<const ProtocolMetrics> report) {
  std::ostringstream o;
  o << "protocol,metric,k,value\n";
  for (const auto& m : report) {
    o << protocol_name(m.protocol) << ",mAP,," << format_double(m.map) << '\n';
    for (const auto& [k, v] : m.precision_at) {
      o << protocol_name(m.protocol) << ",P@k," << k << ',' << format_double(v) << '\n';
    }
  }
  return o.str();
}

std::string curve_csv(const ProtocolMetrics& m) {
  std::ostringstream o;
  o << "k,precision\n";
  for (std::size_t k = 1; k <= m.curve.size(); ++k) {
    o << k << ',' << format_double(m.curve[k - 1]) << '\n';
  }
  return o.str();
}

std::vector<std::pair<std::size_t, double>> parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "k,precision") {
    throw FormatError("curve CSV: missing 'k,precision' header");
  }
  std::vector<std::pair<std::size_t, double>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError("curve CSV line " + std::to_string(lineno) + ": expected k,precision");
    }
    try {
      out.emplace_back(parse_u64(line.substr(0, comma), "k"),
                       parse_double(line.substr(comma + 1), "precision"));
    } catch (const ConfigError& e) {
      throw FormatError("curve CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string metrics_summary(std::span<const ProtocolMetrics> report) {
  std::ostringstream o;
  for (const auto& m : report) {
    const std::string p = protocol_name(m.protocol);
    o << p << ".mAP=" << format_double(m.map) << '\n';
    for (const auto& [k, v] : m.precision_at) o << p << ".P@" << k << '=' << format_double(v) << '\n';
    o << p << ".queries=" << m.queries << '\n' << p << ".excluded=" << m.excluded << '\n';
  }
  return o.str();
}

}  // namespace scrl
