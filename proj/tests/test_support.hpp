#pragma once

// Shared fixtures and independent oracles for the test suites. Everything in
// here deliberately avoids the library's fast paths: metrics are evaluated
// straight from their definitions, gradients from central finite differences,
// and walker reachability from layered breadth-first enumeration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "facetpath/hetgraph.hpp"
#include "facetpath/rng.hpp"
#include "facetpath/tensor.hpp"
#include "facetpath/walker.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// Finite differences

// Central finite-difference gradient of f with respect to param, h = 1e-5.
inline facetpath::Tensor fd_gradient(facetpath::Tensor& param,
                                     const std::function<double()>& f,
                                     double h = 1e-5) {
  facetpath::Tensor grad(param.rows(), param.cols(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double orig = param[i];
    param[i] = orig + h;
    const double fp = f();
    param[i] = orig - h;
    const double fm = f();
    param[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Max relative error with an absolute floor, suitable for near-zero entries.
inline double max_rel_err(const facetpath::Tensor& a, const facetpath::Tensor& b,
                          double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Graph fixtures

// Six-node alternating A/B cycle: A0-B1-A2-B3-A4-B5-A0. Labels on A nodes.
inline facetpath::HeteroGraph six_node_fixture() {
  return facetpath::HeteroGraph::build(
      {0, 1, 0, 1, 0, 1}, {"A", "B"},
      {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}},
      {{0, 0}, {2, 1}, {4, 0}});
}

// Random heterogeneous graph for fuzzing: 2-3 types, up to max_nodes nodes.
// Types are assigned round-robin so every type is inhabited and type ids
// appear in first-node order (the canonical form the serializer emits).
inline facetpath::HeteroGraph random_graph(facetpath::Rng& rng, int max_nodes) {
  const int n = 4 + static_cast<int>(rng.uniform_index(max_nodes - 3));
  const int types = 2 + static_cast<int>(rng.uniform_index(2));
  std::vector<int> node_type(n);
  for (int v = 0; v < n; ++v) node_type[v] = v % types;
  std::vector<std::string> names;
  for (int t = 0; t < types; ++t) names.push_back(std::string(1, char('A' + t)));
  std::vector<std::pair<int, int>> edges;
  const int m = static_cast<int>(rng.uniform_index(3 * n + 1));
  for (int e = 0; e < m; ++e) {
    const int u = static_cast<int>(rng.uniform_index(n));
    const int v = static_cast<int>(rng.uniform_index(n));
    if (u != v) edges.emplace_back(u, v);
  }
  return facetpath::HeteroGraph::build(std::move(node_type), std::move(names),
                                       edges, {}, {}, 0);
}

// ---------------------------------------------------------------------------
// Walker oracle: all pairs a walk could ever emit, by layered enumeration.

// Early-stop mode: intermediates must be non-target nodes (a walk would have
// stopped at any target node, and stepping back onto the start terminates it).
inline std::set<std::pair<int, int>> reachable_pairs_early_stop(
    const facetpath::HeteroGraph& g, int path_length) {
  const int target = g.target_type();
  std::set<std::pair<int, int>> pairs;
  for (int a = 0; a < g.num_nodes(); ++a) {
    if (g.node_type(a) != target) continue;
    std::set<int> layer;  // non-target nodes reachable in `step` steps
    for (int step = 1; step <= path_length; ++step) {
      std::set<int> next_layer;
      if (step == 1) {
        for (int u : g.neighbors(a)) {
          if (g.node_type(u) != target) next_layer.insert(u);
        }
      } else {
        for (int s : layer) {
          for (int u : g.neighbors(s)) {
            if (g.node_type(u) != target) next_layer.insert(u);
          }
        }
      }
      // Targets adjacent to the previous non-target layer finish a path of
      // step >= 2 edges (at least one intermediate).
      if (step >= 2) {
        const std::set<int>& from = layer;
        for (int s : from) {
          for (int u : g.neighbors(s)) {
            if (g.node_type(u) == target && u != a) {
              pairs.insert({std::min(a, u), std::max(a, u)});
            }
          }
        }
      }
      layer = std::move(next_layer);
    }
  }
  return pairs;
}

// Strict mode: exactly path_length steps, any node types in between.
inline std::set<std::pair<int, int>> reachable_pairs_strict(
    const facetpath::HeteroGraph& g, int path_length) {
  const int target = g.target_type();
  std::set<std::pair<int, int>> pairs;
  for (int a = 0; a < g.num_nodes(); ++a) {
    if (g.node_type(a) != target) continue;
    std::set<int> layer = {a};
    for (int step = 0; step < path_length; ++step) {
      std::set<int> next_layer;
      for (int s : layer) {
        for (int u : g.neighbors(s)) next_layer.insert(u);
      }
      layer = std::move(next_layer);
    }
    for (int u : layer) {
      if (g.node_type(u) == target && u != a) {
        pairs.insert({std::min(a, u), std::max(a, u)});
      }
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Metric oracles, straight from the definitions.

inline double oracle_micro_f1(const std::vector<int>& pred,
                              const std::vector<int>& truth, int classes) {
  double tp = 0, fp = 0, fn = 0;
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && truth[i] == c) tp += 1;
      if (pred[i] == c && truth[i] != c) fp += 1;
      if (pred[i] != c && truth[i] == c) fn += 1;
    }
  }
  const double denom = tp + 0.5 * (fp + fn);
  return denom == 0 ? 0.0 : tp / denom;
}

inline double oracle_macro_f1(const std::vector<int>& pred,
                              const std::vector<int>& truth, int classes) {
  double sum = 0;
  for (int c = 0; c < classes; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && truth[i] == c) tp += 1;
      if (pred[i] == c && truth[i] != c) fp += 1;
      if (pred[i] != c && truth[i] == c) fn += 1;
    }
    const double denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0 : 2 * tp / denom;
  }
  return sum / classes;
}

// Pairwise Mann-Whitney with ties counted one half.
inline double oracle_auc(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  double wins = 0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

inline double oracle_nmi(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1;
    pb[b[i]] += 1;
    pab[{a[i], b[i]}] += 1;
  }
  double ha = 0, hb = 0, mi = 0;
  for (auto& [k, v] : pa) ha -= v / n * std::log(v / n);
  for (auto& [k, v] : pb) hb -= v / n * std::log(v / n);
  if (ha <= 0 || hb <= 0) return (ha <= 0 && hb <= 0) ? 1.0 : 0.0;
  for (auto& [k, v] : pab) {
    mi += v / n * std::log((v / n) / ((pa[k.first] / n) * (pb[k.second] / n)));
  }
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

inline double oracle_ari(const std::vector<int>& a, const std::vector<int>& b) {
  // Direct pair counting over all item pairs.
  const std::size_t n = a.size();
  double n11 = 0, n00 = 0, n10 = 0, n01 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool ta = a[i] == a[j], tb = b[i] == b[j];
      if (ta && tb) n11 += 1;
      else if (!ta && !tb) n00 += 1;
      else if (ta) n10 += 1;
      else n01 += 1;
    }
  }
  const double total = n11 + n00 + n10 + n01;
  if (total == 0) return 1.0;
  const double sum_a = n11 + n10;  // pairs together in a
  const double sum_b = n11 + n01;  // pairs together in b
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return n11 == expected ? 1.0 : 0.0;
  return (n11 - expected) / (max_index - expected);
}

}  // namespace testsupport
