#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "facetpath/tensor.hpp"

namespace facetpath {

// Heterogeneous graph with a single global id space. Node type is an
// attribute; adjacency is one undirected CSR over all nodes. Immutable after
// construction and safe to share across threads.
class HeteroGraph {
 public:
  // Builds from an edge list: symmetrizes, drops duplicate edges, sorts
  // neighbor lists. Self loops throw IngestError. labels maps node id ->
  // class id and must stay within one node type (the target type).
  static HeteroGraph build(std::vector<int> node_type,
                           std::vector<std::string> type_names,
                           const std::vector<std::pair<int, int>>& edges,
                           std::map<int, int> labels = {},
                           std::map<int, Tensor> features_by_type = {},
                           std::optional<int> target_type = std::nullopt);

  int num_nodes() const { return static_cast<int>(node_type_.size()); }
  int num_types() const { return static_cast<int>(type_names_.size()); }
  int node_type(int v) const { return node_type_[v]; }
  const std::vector<std::string>& type_names() const { return type_names_; }

  std::span<const int> neighbors(int v) const {
    return {adj_.data() + offsets_[v], adj_.data() + offsets_[v + 1]};
  }
  int degree(int v) const { return offsets_[v + 1] - offsets_[v]; }
  bool has_edge(int u, int v) const;

  // Each undirected edge once, (a, b) with a < b, sorted lexicographically.
  std::vector<std::pair<int, int>> undirected_edges() const;
  std::int64_t num_undirected_edges() const { return adj_.size() / 2; }

  const std::map<int, int>& labels() const { return labels_; }
  int num_classes() const { return num_classes_; }
  bool has_target_type() const { return target_type_.has_value(); }
  int target_type() const;
  void set_target_type(int t);

  const std::map<int, Tensor>& features_by_type() const { return features_by_type_; }
  const Tensor* features_of_type(int t) const;

  // Node ids of one type, ascending.
  std::vector<int> nodes_of_type(int t) const;
  // Row of node v within the ascending list of its own type.
  int index_within_type(int v) const { return index_within_type_[v]; }

  bool operator==(const HeteroGraph& o) const;

 private:
  std::vector<int> node_type_;
  std::vector<std::string> type_names_;
  std::vector<int> offsets_;  // size num_nodes + 1
  std::vector<int> adj_;      // both directions, sorted within each row
  std::map<int, int> labels_;
  int num_classes_ = 0;
  std::optional<int> target_type_;
  std::map<int, Tensor> features_by_type_;
  std::vector<int> index_within_type_;
};

// Reads nodes.tsv / edges.tsv / labels.tsv / features-<type>.csv from a
// directory. target_type_name empty means "infer from labels".
HeteroGraph load_graph(const std::string& dir_path,
                       const std::string& target_type_name = "");

// Inverse serializer: emits the same formats with sorted ids.
void write_graph(const HeteroGraph& g, const std::string& dir_path);

struct SyntheticSpec {
  int n_per_type = 100;
  int k_facets = 5;
  int n_classes = 3;
  double noise = 0.0;       // fraction of edges rewired uniformly at random
  std::uint64_t seed = 1;
  int avg_degree_ab = 4;    // A-B edges per A node
  int avg_degree_bc = 2;    // B-C edges per B node
  int aa_edges_per_node = 0;  // optional direct A-A edges (link tasks)
};

struct SyntheticGraph {
  HeteroGraph graph;
  std::vector<int> facet_of_a;  // latent facet per type-A node, indexed by id
  std::vector<int> class_of_a;  // facet mod n_classes
};

// Planted-facet generator: 3 types (A target, B bridge, C attribute). B and C
// nodes are facet-pure; each edge endpoint is rewired uniformly with
// probability `noise`. Class of an A node is its facet mod n_classes.
SyntheticGraph generate_synthetic(const SyntheticSpec& spec);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitAssignment {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

// Seeded shuffle, then sizes floor(n*val) and floor(n*test) with the
// remainder assigned to train. Items are node ids or edge indices.
SplitAssignment make_split(const std::vector<int>& items, SplitRatios ratios,
                           std::uint64_t seed);

// Graph with the given undirected edges removed (used to strip held-out link
// positives before walking).
HeteroGraph remove_edges(const HeteroGraph& g,
                         const std::vector<std::pair<int, int>>& edges);

}  // namespace facetpath
