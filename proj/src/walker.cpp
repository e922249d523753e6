#include "facetpath/walker.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <thread>
#include <utility>

#include "facetpath/errors.hpp"

namespace facetpath {

void WalkConfig::validate() const {
  if (path_length < 2) throw ConfigError("walk: path_length must be >= 2");
  if (attempts < 1) throw ConfigError("walk: attempts must be >= 1");
}

std::optional<PathRecord> random_walk(const HeteroGraph& g, int start,
                                      const WalkConfig& cfg, Rng& rng) {
  cfg.validate();
  const int target = g.target_type();
  if (g.node_type(start) != target) {
    throw ContractError("random_walk: start node " + std::to_string(start) +
                        " is not of the target type");
  }

  PathRecord path;
  path.nodes.push_back(start);
  int cur = start;
  for (int step = 0; step < cfg.path_length; ++step) {
    const auto nbrs = g.neighbors(cur);
    if (nbrs.empty()) return std::nullopt;
    cur = nbrs[rng.uniform_index(nbrs.size())];
    path.nodes.push_back(cur);
    if (!cfg.strict_f1 && g.node_type(cur) == target) {
      // Early stop at the first target-type node. Returning to the start or
      // landing on a directly adjacent target (no intermediates) yields
      // nothing usable.
      if (cur == start || path.nodes.size() < 3) return std::nullopt;
      return path;
    }
  }
  if (!cfg.strict_f1) return std::nullopt;
  const int end = path.nodes.back();
  if (g.node_type(end) != target || end == start || path.nodes.size() < 3) {
    return std::nullopt;
  }
  return path;
}

namespace {

struct NodeCandidates {
  // First path per unordered pair found from this start node, in discovery
  // order (discovery order matters for the global first-wins merge).
  std::vector<PathRecord> paths;
};

NodeCandidates walk_one_start(const HeteroGraph& g, const WalkConfig& cfg,
                              int start) {
  NodeCandidates out;
  Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(start)));
  std::map<std::pair<int, int>, bool> seen;
  for (int attempt = 0; attempt < cfg.attempts; ++attempt) {
    auto path = random_walk(g, start, cfg, rng);
    if (!path) continue;
    const int a = std::min(path->endpoint_a(), path->endpoint_b());
    const int b = std::max(path->endpoint_a(), path->endpoint_b());
    if (seen.emplace(std::make_pair(a, b), true).second) {
      out.paths.push_back(std::move(*path));
    }
  }
  return out;
}

}  // namespace

FacetSubgraph build_subgraph(const HeteroGraph& g, const WalkConfig& cfg,
                             int workers) {
  cfg.validate();
  if (workers < 1) throw ConfigError("build_subgraph: workers must be >= 1");
  const int target = g.target_type();

  FacetSubgraph sub;
  sub.target_ids = g.nodes_of_type(target);
  if (sub.target_ids.empty()) {
    throw ContractError("build_subgraph: graph has no target-type nodes");
  }
  const int n = static_cast<int>(sub.target_ids.size());

  // Each start node owns an independent rng stream, so results are identical
  // for any partitioning; the merge below fixes the global order.
  std::vector<NodeCandidates> per_node(n);
  if (workers == 1) {
    for (int i = 0; i < n; ++i) {
      per_node[i] = walk_one_start(g, cfg, sub.target_ids[i]);
    }
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (int i = w; i < n; i += workers) {
          per_node[i] = walk_one_start(g, cfg, sub.target_ids[i]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Global first-wins dedup in (start node ascending, attempt ascending) order.
  std::map<std::pair<int, int>, std::vector<int>> kept;
  for (int i = 0; i < n; ++i) {
    for (PathRecord& p : per_node[i].paths) {
      const int a = std::min(p.endpoint_a(), p.endpoint_b());
      const int b = std::max(p.endpoint_a(), p.endpoint_b());
      std::vector<int> inter(p.nodes.begin() + 1, p.nodes.end() - 1);
      if (p.endpoint_a() != a) std::reverse(inter.begin(), inter.end());
      kept.emplace(std::make_pair(a, b), std::move(inter));
    }
  }

  sub.edges.reserve(kept.size());
  for (auto& [pair, inter] : kept) {
    sub.edges.push_back(SubgraphEdge{pair.first, pair.second, std::move(inter)});
  }

  std::map<int, int> row_of;
  for (int i = 0; i < n; ++i) row_of[sub.target_ids[i]] = i;
  sub.incident.assign(n, {});
  for (std::size_t e = 0; e < sub.edges.size(); ++e) {
    sub.incident[row_of[sub.edges[e].a]].push_back(static_cast<int>(e));
    sub.incident[row_of[sub.edges[e].b]].push_back(static_cast<int>(e));
  }
  return sub;
}

std::string validate_path(const HeteroGraph& g, const PathRecord& p,
                          const WalkConfig& cfg) {
  if (p.nodes.size() < 3) return "path has no intermediates";
  if (p.nodes.size() > static_cast<std::size_t>(cfg.path_length) + 1) {
    return "path longer than path_length";
  }
  const int target = g.target_type();
  if (g.node_type(p.endpoint_a()) != target) return "first endpoint not target type";
  if (g.node_type(p.endpoint_b()) != target) return "last endpoint not target type";
  if (p.endpoint_a() == p.endpoint_b()) return "self pair";
  for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
    if (!g.has_edge(p.nodes[i], p.nodes[i + 1])) {
      return "non-adjacent consecutive nodes " + std::to_string(p.nodes[i]) +
             "," + std::to_string(p.nodes[i + 1]);
    }
  }
  return "";
}

void write_paths(const FacetSubgraph& sub, const std::string& file) {
  std::ofstream out(file);
  if (!out) throw IngestError("cannot open " + file + " for writing");
  for (const SubgraphEdge& e : sub.edges) {
    out << e.a;
    for (int s : e.intermediates) out << ' ' << s;
    out << ' ' << e.b << '\n';
  }
}

}  // namespace facetpath
