#pragma once

#include <string>
#include <vector>

#include "facetpath/training.hpp"

namespace facetpath {

enum class AblationAxis { EdgeWeight, FacetCount, Temperature, TrainRatio };

AblationAxis ablation_axis_from_string(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationSpec {
  AblationAxis axis = AblationAxis::EdgeWeight;
  std::vector<std::string> values;  // parsed per axis
  TrainConfig config;
  HyperParams hyper;
  WalkConfig walk;

  void validate() const;
};

// Cartesian (axis value x seed) protocol runs; rows in (value, seed) order.
MetricsReport run_ablation(const HeteroGraph& g, const AblationSpec& spec);

struct TimingReport {
  std::vector<int> k_values;
  std::vector<double> mean_epoch_ms;  // forward+backward only
  std::vector<int> repetitions;
  double slope = 0.0;      // ms per facet
  double intercept = 0.0;  // ms
  double r_squared = 0.0;

  std::string to_csv() const;
};

// Measures per-epoch forward+backward wall time against the facet count on a
// fixed subgraph and fits time = intercept + slope * K. Needs >= 3 K values.
// Runs below min_epoch_ms trigger automatic repetition increases.
TimingReport time_scaling(const HeteroGraph& g, const std::vector<int>& k_values,
                          const HyperParams& base, const WalkConfig& walk,
                          int epochs = 25, double min_epoch_ms = 1.0);

}  // namespace facetpath
