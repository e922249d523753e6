#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "facetpath/hetgraph.hpp"
#include "facetpath/rng.hpp"

namespace facetpath {

// One sampled walk between two target-type endpoints:
// nodes = [v_i, s_1..s_m, v_j] with m >= 1 intermediates.
struct PathRecord {
  std::vector<int> nodes;

  int endpoint_a() const { return nodes.front(); }
  int endpoint_b() const { return nodes.back(); }
  std::size_t num_intermediates() const { return nodes.size() - 2; }
};

struct WalkConfig {
  int path_length = 5;     // max edges per walk
  int attempts = 1000;     // trials per start node
  std::uint64_t seed = 0;
  bool strict_f1 = false;  // walk the full length, check endpoint type at the end

  void validate() const;
};

// Homogeneous graph over target-type nodes; each edge keeps the intermediate
// nodes of the first path found for its endpoint pair.
struct SubgraphEdge {
  int a;  // a < b
  int b;
  std::vector<int> intermediates;  // ordered a -> b
};

struct FacetSubgraph {
  std::vector<int> target_ids;                 // ascending, all target-type nodes
  std::vector<SubgraphEdge> edges;             // unique unordered pairs, sorted
  std::vector<std::vector<int>> incident;      // per target row: edge indices

  std::size_t num_edges() const { return edges.size(); }
};

// One walk from `start` (must be target type). Default mode stops at the
// first target-type node reached; strict mode walks exactly path_length steps
// and then checks the endpoint. Returns nullopt when no valid path results.
std::optional<PathRecord> random_walk(const HeteroGraph& g, int start,
                                      const WalkConfig& cfg, Rng& rng);

// Runs up to cfg.attempts walks per target node with an independent rng
// stream per start node, keeps the first path per unordered endpoint pair.
// Deterministic for fixed seed regardless of worker count.
FacetSubgraph build_subgraph(const HeteroGraph& g, const WalkConfig& cfg,
                             int workers = 1);

// Checks every PathRecord invariant against the graph; returns an error
// description or empty string when valid.
std::string validate_path(const HeteroGraph& g, const PathRecord& p,
                          const WalkConfig& cfg);

// paths.tsv: one kept path per line, space-separated node ids (a ... b).
void write_paths(const FacetSubgraph& sub, const std::string& file);

}  // namespace facetpath
