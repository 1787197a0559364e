#include "scrl/sweep.hpp"

#include <algorithm>
#include <sstream>

#include "scrl/config.hpp"
#include "scrl/errors.hpp"

namespace scrl {

std::vector<SweepCell> sweep_grid(std::span<const double> eta1, std::span<const double> eta2) {
  std::vector<SweepCell> out;
  for (double a : eta1)
    for (double b : eta2) out.push_back({a, b});
  return out;
}

std::vector<SweepRow> hyperparameter_sweep(const Manifest& train_set, const FeatureSet& train,
                                           const FeatureSet& test, const TrainConfig& base,
                                           std::span<const SweepCell> grid,
                                           const std::function<void(const SweepRow&)>& on_row) {
  if (grid.empty()) throw ContractError("hyperparameter_sweep: empty grid");
  std::vector<SweepRow> rows;
  for (const SweepCell& cell : grid) {
    TrainConfig cfg = base;
    cfg.loss.eta1 = cell.eta1;
    cfg.loss.eta2 = cell.eta2;
    TrainOptions opts;
    opts.features = &train;
    const Checkpoint ck = scrl::train(train_set, cfg, opts);
    const EmbeddingCorpus corpus = embed_corpus(test, ck.model);
    SweepRow row{cell.eta1, cell.eta2, mean_ap(corpus, Protocol::kImageToVoice),
                 mean_ap(corpus, Protocol::kVoiceToImage)};
    if (on_row) on_row(row);
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.mean_map() > b.mean_map();
  });
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream o;
  o << "eta1,eta2,map_i2v,map_v2i\n";
  for (const auto& r : rows) {
    o << format_double(r.eta1) << ',' << format_double(r.eta2) << ',' << format_double(r.map_i2v)
      << ',' << format_double(r.map_v2i) << '\n';
  }
  return o.str();
}

}  // namespace scrl
