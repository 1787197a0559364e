#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scrl/retrieval.hpp"
#include "scrl/trainer.hpp"

namespace scrl {

struct SweepCell {
  double eta1 = 1.0;
  double eta2 = 0.1;
};

struct SweepRow {
  double eta1 = 0.0;
  double eta2 = 0.0;
  double map_i2v = 0.0;
  double map_v2i = 0.0;

  double mean_map() const { return 0.5 * (map_i2v + map_v2i); }
};

// Cartesian product, eta1 major.
std::vector<SweepCell> sweep_grid(std::span<const double> eta1, std::span<const double> eta2);

// Trains one model per cell from the base config (same seed, fresh init) and
// scores it on the test features. Rows come back sorted by mean mAP,
// descending; equal scores keep grid order.
std::vector<SweepRow> hyperparameter_sweep(const Manifest& train_set, const FeatureSet& train,
                                           const FeatureSet& test, const TrainConfig& base,
                                           std::span<const SweepCell> grid,
                                           const std::function<void(const SweepRow&)>& on_row = {});

// eta1,eta2,map_i2v,map_v2i rows.
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace scrl
