#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "facetpath/hetgraph.hpp"
#include "facetpath/tape.hpp"
#include "facetpath/walker.hpp"

namespace facetpath {

enum class EdgeWeightMode { Gumbel, Random, None };

enum class Task { NodeClassification, LinkPrediction };

std::string to_string(EdgeWeightMode m);
EdgeWeightMode edge_weight_mode_from_string(const std::string& s);

struct HyperParams {
  int facets = 5;        // K
  double tau = 0.5;      // Gumbel-Softmax temperature
  int layers = 2;        // L
  int dim = 64;          // d
  double dropout = 0.5;
  EdgeWeightMode edge_weight_mode = EdgeWeightMode::Gumbel;
  bool hard_select = false;  // straight-through one-hot facet selection
  bool gumbel_noise = true;  // off: deterministic softmax weights, train included

  void validate() const;
};

// All trainables plus batch-norm running state. Copyable; the best-validation
// snapshot during training is a plain copy.
struct ModelParams {
  Tensor embeddings;                  // |V| x d
  std::vector<Tensor> facet_proj;     // K matrices, d x d
  Tensor facet_scorer;                // 1 x d
  std::vector<Tensor> bn_gamma;       // L of 1 x d
  std::vector<Tensor> bn_beta;        // L of 1 x d
  std::vector<BatchNormState> bn_state;
  Tensor classifier_w;                // C x d (node classification only)
  Tensor classifier_b;                // 1 x C
  std::map<int, Tensor> feature_proj;  // per-type d_feat x d, used at init

  // Visits every trainable with a stable name; skips empty tensors.
  template <typename F>
  void visit_trainables(F&& f) {
    f("E", embeddings);
    for (std::size_t n = 0; n < facet_proj.size(); ++n) {
      f("W_A." + std::to_string(n), facet_proj[n]);
    }
    f("W_B", facet_scorer);
    for (std::size_t l = 0; l < bn_gamma.size(); ++l) {
      f("bn.gamma." + std::to_string(l), bn_gamma[l]);
      f("bn.beta." + std::to_string(l), bn_beta[l]);
    }
    if (!classifier_w.empty()) {
      f("W_C", classifier_w);
      f("b_C", classifier_b);
    }
  }
};

// Seeded initialization. Embeddings come from per-type feature projections
// when the graph carries features, otherwise from a uniform
// (-sqrt(6/2d), +sqrt(6/2d)) draw. num_classes == 0 skips the classifier.
ModelParams init_params(const HeteroGraph& g, const HyperParams& hp,
                        int num_classes, std::uint64_t seed);

// Precomputed index arrays for one facet subgraph; build once, reuse across
// epochs.
struct SubgraphPlan {
  std::vector<int> target_ids;        // ascending node ids
  std::vector<int> row_of_node;       // node id -> target row (-1 if not target)
  std::vector<int> uniq_intermediates;  // sorted unique node ids
  std::vector<int> flat_inter;        // positions into uniq_intermediates
  std::vector<int> flat_edge;         // edge index per flat_inter entry
  Tensor inv_inter_count;             // E x 1, 1/m_e
  std::vector<int> arc_src_row;       // 2E directed arcs
  std::vector<int> arc_dst_row;
  std::vector<int> arc_edge;
  std::vector<std::vector<int>> incident;  // per target row
  int num_edges = 0;

  int row_of(int node) const { return row_of_node[node]; }
};

SubgraphPlan make_plan(const HeteroGraph& g, const FacetSubgraph& sub);

// Per-pass leaf ids for the parameters.
struct ParamLeaves {
  VarId embeddings = -1;
  std::vector<VarId> facet_proj;
  VarId facet_scorer = -1;
  std::vector<VarId> bn_gamma;
  std::vector<VarId> bn_beta;
  VarId classifier_w = -1;
  VarId classifier_b = -1;
};

ParamLeaves stage_params(Tape& tape, const ModelParams& p, bool requires_grad);

struct ForwardResult {
  VarId node_embeddings = -1;  // n_targets x d (h^L)
  VarId class_probs = -1;      // n_targets x C, -1 unless classifier present
  VarId facet_weights = -1;    // E x K alpha, -1 in None mode
};

// Per-edge facet features: facet projection of intermediate embeddings,
// mean pooling per edge, and facet weighting per edge_weight_mode.
struct EdgeFeatureVars {
  VarId combined = -1;            // E x d, the edge feature P
  VarId alpha = -1;               // E x K, -1 in None mode
  std::vector<VarId> per_facet;   // K of E x d (P_n), empty in None mode
};

EdgeFeatureVars compute_edge_features(Tape& tape, const ParamLeaves& leaves,
                                      const SubgraphPlan& plan,
                                      const HyperParams& hp, Mode mode,
                                      Rng* rng);

// Full forward pass per Algorithm: facet projection of intermediates, mean
// aggregation per edge, facet weighting, then `layers` edge-featured
// convolutions. rng is consumed only in train mode (Gumbel noise, dropout,
// random facet selection).
ForwardResult model_forward(Tape& tape, const ParamLeaves& leaves,
                            ModelParams& params, const SubgraphPlan& plan,
                            const HyperParams& hp, Mode mode, Rng* rng);

struct WarmUpOptions {
  int max_epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  bool negatives = true;    // disable for exact symmetry tests
  double min_improvement = 1e-4;
  int patience = 5;
};

// Mean-aggregation warm-up: h(v) = mean of neighbor embeddings, trained with
// a first-order contrastive loss over graph edges (one uniform negative per
// edge). On return params.embeddings holds the aggregated h.
// Returns the per-epoch loss trace.
std::vector<double> warm_up(const HeteroGraph& g, ModelParams& params,
                            const WarmUpOptions& opts, std::uint64_t seed);

// Per-node facet attention: mean of alpha over incident edges, uniform 1/K
// for isolated nodes (flagged). Rows sum to 1.
struct AttentionExport {
  std::vector<int> node_ids;
  Tensor rows;                  // n_targets x K
  std::vector<char> isolated;   // per row
};

AttentionExport export_attention(const HeteroGraph& g, const SubgraphPlan& plan,
                                 const ModelParams& params, const HyperParams& hp);

void write_attention_csv(const AttentionExport& att, const HeteroGraph& g,
                         const std::string& file);

// Versioned binary checkpoint: magic "MF2V", u32 version, named tensor
// records (u32 name length, bytes, u32 ndims, u64 dims, f64 payload), all
// little-endian.
void save_checkpoint(const ModelParams& params, const HyperParams& hp,
                     const std::string& file);
ModelParams load_checkpoint(const std::string& file, HyperParams* hp_out = nullptr);

}  // namespace facetpath
