#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facetpath/hetgraph.hpp"
#include "facetpath/model.hpp"
#include "facetpath/tape.hpp"
#include "facetpath/walker.hpp"

namespace facetpath {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int max_epochs = 500;
  int patience = 20;
  std::vector<std::uint64_t> seeds = {1, 10, 100, 1000, 10000};
  Task task = Task::NodeClassification;
  int neg_per_pos = 1;
  int warmup_epochs = 100;
  SplitRatios ratios;

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainTrace {
  std::vector<EpochStats> epochs;
  std::vector<double> warmup_loss;
  int best_epoch = 0;  // 1-based; 0 means never improved
  std::string stop_reason;
};

// Cross-entropy sum over labeled rows. `probs` rows must already be softmax
// outputs aligned with `labels`; probabilities are clamped at 1e-12 (clamp
// hits are counted on the tape).
VarId loss_nc(Tape& tape, VarId probs, const std::vector<int>& labels);

// Contrastive link loss over row-index pairs into the embedding matrix.
VarId loss_lp(Tape& tape, VarId embeddings,
              const std::vector<std::pair<int, int>>& positives,
              const std::vector<std::pair<int, int>>& negatives);

// For each positive (u, v) draws neg_per_pos pairs (u, v') with v' a
// target-type node, v' != u, and (u, v') not an edge of g. Rejection capped
// at 1000 draws per negative.
std::vector<std::pair<int, int>> sample_negatives(
    const HeteroGraph& g, const std::vector<std::pair<int, int>>& positives,
    Rng& rng, int neg_per_pos = 1);

// Split material for one training run. Node ids for classification, positive
// node-id pairs for link prediction.
struct TaskSplit {
  std::vector<int> train_nodes, val_nodes, test_nodes;
  std::vector<std::pair<int, int>> train_pairs, val_pairs, test_pairs;
};

struct TrainResult {
  ModelParams params;
  TrainTrace trace;
};

// Full training run: seeded init, warm-up, full-batch epochs with Adam,
// validation-loss early stopping, best-validation parameter snapshot.
TrainResult train_model(const HeteroGraph& g, const FacetSubgraph& sub,
                        const TrainConfig& cfg, const HyperParams& hp,
                        const TaskSplit& split, std::uint64_t seed);

struct ReportRow {
  std::string axis;  // ablation axis value; empty for plain protocol runs
  std::uint64_t seed = 0;
  double auc = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  int best_epoch = 0;
  int epochs = 0;
  double wall_ms = 0.0;
};

struct MetricsReport {
  std::vector<ReportRow> rows;

  // Population mean/std per axis value, in first-appearance order.
  struct Aggregate {
    std::string axis;
    ReportRow mean;
    ReportRow stddev;
    int count = 0;
  };
  std::vector<Aggregate> aggregates() const;

  // CSV with one row per (axis, seed) plus mean/std rows per axis group.
  // Timing columns are included unless with_timing is false (used by the
  // reproducibility check).
  std::string to_csv(bool with_timing = true) const;
  std::string to_json() const;
};

// Per-seed protocol: split, walk, train, evaluate on the test portion.
// Classification reports OVR-AUC/F1s plus k-means NMI/ARI on the test
// embeddings; link prediction reports binary AUC and threshold-0.5 F1s.
MetricsReport run_protocol(const HeteroGraph& g, const TrainConfig& cfg,
                           const HyperParams& hp, const WalkConfig& walk);

// Single-seed version returning the trained model as well.
struct ProtocolRun {
  ReportRow row;
  TrainResult result;
  FacetSubgraph subgraph;
  TaskSplit split;
};
ProtocolRun run_protocol_seed(const HeteroGraph& g, const TrainConfig& cfg,
                              const HyperParams& hp, const WalkConfig& walk,
                              std::uint64_t seed);

}  // namespace facetpath
