#include "facetpath/hetgraph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "facetpath/errors.hpp"
#include "facetpath/rng.hpp"

namespace facetpath {

namespace fs = std::filesystem;

HeteroGraph HeteroGraph::build(std::vector<int> node_type,
                               std::vector<std::string> type_names,
                               const std::vector<std::pair<int, int>>& edges,
                               std::map<int, int> labels,
                               std::map<int, Tensor> features_by_type,
                               std::optional<int> target_type) {
  HeteroGraph g;
  const int n = static_cast<int>(node_type.size());
  for (int t : node_type) {
    if (t < 0 || t >= static_cast<int>(type_names.size())) {
      throw IngestError("node type id out of range: " + std::to_string(t));
    }
  }
  g.node_type_ = std::move(node_type);
  g.type_names_ = std::move(type_names);

  std::vector<std::set<int>> nbr(n);
  for (const auto& [u, v] : edges) {
    if (u < 0 || u >= n || v < 0 || v >= n) {
      throw IngestError("edge endpoint out of range: " + std::to_string(u) +
                        "-" + std::to_string(v));
    }
    if (u == v) {
      throw IngestError("self-loop rejected: " + std::to_string(u));
    }
    nbr[u].insert(v);
    nbr[v].insert(u);
  }
  g.offsets_.resize(n + 1, 0);
  for (int v = 0; v < n; ++v) {
    g.offsets_[v + 1] = g.offsets_[v] + static_cast<int>(nbr[v].size());
  }
  g.adj_.reserve(g.offsets_[n]);
  for (int v = 0; v < n; ++v) {
    g.adj_.insert(g.adj_.end(), nbr[v].begin(), nbr[v].end());
  }

  if (target_type) {
    if (*target_type < 0 || *target_type >= g.num_types()) {
      throw IngestError("target type id out of range");
    }
    g.target_type_ = target_type;
  }
  for (const auto& [id, cls] : labels) {
    if (id < 0 || id >= n) {
      throw IngestError("label on unknown node " + std::to_string(id));
    }
    if (cls < 0) throw IngestError("negative class id");
    if (!g.target_type_) g.target_type_ = g.node_type_[id];
    if (g.node_type_[id] != *g.target_type_) {
      throw IngestError("label on node " + std::to_string(id) +
                        " of non-target type");
    }
    g.num_classes_ = std::max(g.num_classes_, cls + 1);
  }
  g.labels_ = std::move(labels);

  for (const auto& [t, feat] : features_by_type) {
    if (t < 0 || t >= g.num_types()) {
      throw IngestError("features for unknown type " + std::to_string(t));
    }
    std::size_t count = 0;
    for (int v = 0; v < n; ++v) count += g.node_type_[v] == t;
    if (feat.rows() != count) {
      throw IngestError("feature row count " + std::to_string(feat.rows()) +
                        " != node count " + std::to_string(count) +
                        " for type " + g.type_names_[t]);
    }
  }
  g.features_by_type_ = std::move(features_by_type);

  g.index_within_type_.resize(n, 0);
  std::vector<int> seen(g.num_types(), 0);
  for (int v = 0; v < n; ++v) g.index_within_type_[v] = seen[g.node_type_[v]]++;
  return g;
}

bool HeteroGraph::has_edge(int u, int v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

std::vector<std::pair<int, int>> HeteroGraph::undirected_edges() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(adj_.size() / 2);
  for (int v = 0; v < num_nodes(); ++v) {
    for (int u : neighbors(v)) {
      if (v < u) out.emplace_back(v, u);
    }
  }
  return out;
}

int HeteroGraph::target_type() const {
  if (!target_type_) throw ContractError("graph has no target type set");
  return *target_type_;
}

void HeteroGraph::set_target_type(int t) {
  if (t < 0 || t >= num_types()) throw ConfigError("target type out of range");
  for (const auto& [id, cls] : labels_) {
    (void)cls;
    if (node_type_[id] != t) {
      throw ConfigError("existing labels conflict with new target type");
    }
  }
  target_type_ = t;
}

const Tensor* HeteroGraph::features_of_type(int t) const {
  auto it = features_by_type_.find(t);
  return it == features_by_type_.end() ? nullptr : &it->second;
}

std::vector<int> HeteroGraph::nodes_of_type(int t) const {
  std::vector<int> out;
  for (int v = 0; v < num_nodes(); ++v) {
    if (node_type_[v] == t) out.push_back(v);
  }
  return out;
}

bool HeteroGraph::operator==(const HeteroGraph& o) const {
  return node_type_ == o.node_type_ && type_names_ == o.type_names_ &&
         offsets_ == o.offsets_ && adj_ == o.adj_ && labels_ == o.labels_ &&
         target_type_ == o.target_type_ &&
         features_by_type_ == o.features_by_type_;
}

namespace {

struct Line {
  int number;
  std::string text;
};

std::vector<Line> read_lines(const fs::path& path, bool required) {
  std::ifstream in(path);
  if (!in) {
    if (required) throw IngestError("missing file: " + path.string());
    return {};
  }
  std::vector<Line> lines;
  std::string s;
  int num = 0;
  while (std::getline(in, s)) {
    ++num;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    if (s.empty() || s[0] == '#') continue;
    lines.push_back({num, s});
  }
  return lines;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

int parse_int(const std::string& tok, const fs::path& file, int line) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IngestError(file.filename().string() + ":" + std::to_string(line) +
                      ": bad integer '" + tok + "'");
  }
}

}  // namespace

HeteroGraph load_graph(const std::string& dir_path,
                       const std::string& target_type_name) {
  const fs::path dir(dir_path);

  std::vector<std::string> type_names;
  std::map<std::string, int> type_id;
  std::map<int, int> type_of;  // node id -> type id
  for (const Line& l : read_lines(dir / "nodes.tsv", true)) {
    auto toks = split_ws(l.text);
    if (toks.size() != 2) {
      throw IngestError("nodes.tsv:" + std::to_string(l.number) +
                        ": expected 'id<TAB>type'");
    }
    const int id = parse_int(toks[0], "nodes.tsv", l.number);
    auto [it, fresh] = type_id.emplace(toks[1], static_cast<int>(type_names.size()));
    if (fresh) type_names.push_back(toks[1]);
    if (!type_of.emplace(id, it->second).second) {
      throw IngestError("nodes.tsv:" + std::to_string(l.number) +
                        ": duplicate node id " + std::to_string(id));
    }
  }
  const int n = static_cast<int>(type_of.size());
  std::vector<int> node_type(n, -1);
  for (const auto& [id, t] : type_of) {
    if (id < 0 || id >= n) {
      throw IngestError("nodes.tsv: node ids must be contiguous 0.." +
                        std::to_string(n - 1) + ", got " + std::to_string(id));
    }
    node_type[id] = t;
  }

  std::vector<std::pair<int, int>> edges;
  for (const Line& l : read_lines(dir / "edges.tsv", true)) {
    auto toks = split_ws(l.text);
    if (toks.size() != 2) {
      throw IngestError("edges.tsv:" + std::to_string(l.number) +
                        ": expected 'src<TAB>dst'");
    }
    const int u = parse_int(toks[0], "edges.tsv", l.number);
    const int v = parse_int(toks[1], "edges.tsv", l.number);
    if (u < 0 || u >= n || v < 0 || v >= n) {
      throw IngestError("edges.tsv:" + std::to_string(l.number) +
                        ": dangling node id");
    }
    if (u == v) {
      throw IngestError("edges.tsv:" + std::to_string(l.number) +
                        ": self-loop rejected");
    }
    edges.emplace_back(u, v);
  }

  std::optional<int> target_type;
  if (!target_type_name.empty()) {
    auto it = type_id.find(target_type_name);
    if (it == type_id.end()) {
      throw IngestError("unknown target type '" + target_type_name + "'");
    }
    target_type = it->second;
  }

  std::map<int, int> labels;
  for (const Line& l : read_lines(dir / "labels.tsv", false)) {
    auto toks = split_ws(l.text);
    if (toks.size() != 2) {
      throw IngestError("labels.tsv:" + std::to_string(l.number) +
                        ": expected 'id<TAB>class'");
    }
    const int id = parse_int(toks[0], "labels.tsv", l.number);
    const int cls = parse_int(toks[1], "labels.tsv", l.number);
    if (id < 0 || id >= n) {
      throw IngestError("labels.tsv:" + std::to_string(l.number) +
                        ": dangling node id " + std::to_string(id));
    }
    if (!target_type) target_type = node_type[id];
    if (node_type[id] != *target_type) {
      throw IngestError("labels.tsv:" + std::to_string(l.number) +
                        ": label on non-target-type node " + std::to_string(id));
    }
    labels[id] = cls;
  }

  std::map<int, Tensor> features;
  for (int t = 0; t < static_cast<int>(type_names.size()); ++t) {
    const fs::path f = dir / ("features-" + type_names[t] + ".csv");
    if (!fs::exists(f)) continue;
    std::vector<std::vector<double>> rows;
    for (const Line& l : read_lines(f, true)) {
      std::vector<double> row;
      std::stringstream ss(l.text);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        try {
          row.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw IngestError(f.filename().string() + ":" + std::to_string(l.number) +
                            ": bad float '" + cell + "'");
        }
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw IngestError(f.filename().string() + ":" + std::to_string(l.number) +
                          ": non-rectangular feature matrix");
      }
      rows.push_back(std::move(row));
    }
    Tensor m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
    }
    features.emplace(t, std::move(m));
  }

  return HeteroGraph::build(std::move(node_type), std::move(type_names), edges,
                            std::move(labels), std::move(features), target_type);
}

void write_graph(const HeteroGraph& g, const std::string& dir_path) {
  const fs::path dir(dir_path);
  fs::create_directories(dir);

  std::ofstream nodes(dir / "nodes.tsv");
  for (int v = 0; v < g.num_nodes(); ++v) {
    nodes << v << '\t' << g.type_names()[g.node_type(v)] << '\n';
  }

  std::ofstream edges(dir / "edges.tsv");
  for (const auto& [a, b] : g.undirected_edges()) {
    edges << a << '\t' << b << '\n';
  }

  if (!g.labels().empty()) {
    std::ofstream labels(dir / "labels.tsv");
    for (const auto& [id, cls] : g.labels()) {
      labels << id << '\t' << cls << '\n';
    }
  }

  for (const auto& [t, feat] : g.features_by_type()) {
    std::ofstream f(dir / ("features-" + g.type_names()[t] + ".csv"));
    f.precision(17);
    for (std::size_t i = 0; i < feat.rows(); ++i) {
      for (std::size_t j = 0; j < feat.cols(); ++j) {
        if (j) f << ',';
        f << feat.at(i, j);
      }
      f << '\n';
    }
  }
}

SyntheticGraph generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_per_type < 10) throw ConfigError("synthetic: n_per_type must be >= 10");
  if (spec.k_facets < 1) throw ConfigError("synthetic: k_facets must be >= 1");
  if (spec.n_classes < 1) throw ConfigError("synthetic: n_classes must be >= 1");
  if (spec.noise < 0.0 || spec.noise >= 1.0) {
    throw ConfigError("synthetic: noise must be in [0,1)");
  }

  const int n = spec.n_per_type;
  const int k = spec.k_facets;
  Rng rng(Rng::mix(spec.seed, 0x5e1ec7ULL));

  // Node layout: A = [0,n), B = [n,2n), C = [2n,3n).
  std::vector<int> node_type(3 * n);
  for (int i = 0; i < n; ++i) node_type[i] = 0;
  for (int i = n; i < 2 * n; ++i) node_type[i] = 1;
  for (int i = 2 * n; i < 3 * n; ++i) node_type[i] = 2;

  std::vector<int> facet_of_a(n), class_of_a(n);
  for (int a = 0; a < n; ++a) {
    facet_of_a[a] = a % k;
    class_of_a[a] = facet_of_a[a] % spec.n_classes;
  }

  // Bridge/attribute nodes carry a round-robin home facet. A node is
  // facet-pure with probability 1-noise; the rest are promiscuous hubs that
  // accept edges from every facet and act as confounders in walked paths.
  std::vector<char> pure_b(n), pure_c(n);
  std::vector<std::vector<int>> a_of_facet(k), b_pure_of_facet(k), c_pure_of_facet(k);
  std::vector<int> b_noise, c_noise;
  for (int i = 0; i < n; ++i) a_of_facet[i % k].push_back(i);
  for (int i = 0; i < n; ++i) {
    pure_b[i] = rng.uniform() >= spec.noise ? 1 : 0;
    if (pure_b[i]) b_pure_of_facet[i % k].push_back(n + i);
    else b_noise.push_back(n + i);
  }
  for (int i = 0; i < n; ++i) {
    pure_c[i] = rng.uniform() >= spec.noise ? 1 : 0;
    if (pure_c[i]) c_pure_of_facet[i % k].push_back(2 * n + i);
    else c_noise.push_back(2 * n + i);
  }

  std::vector<std::pair<int, int>> edges;
  auto pick = [&](const std::vector<int>& pool) {
    return pool[rng.uniform_index(pool.size())];
  };
  // Pure pool of the facet when available, otherwise any hub, otherwise any
  // pure node (degenerate noise values).
  auto pick_bridge = [&](int facet, bool want_pure,
                         const std::vector<std::vector<int>>& pure_pool,
                         const std::vector<int>& noise_pool, int base) {
    if (want_pure && !pure_pool[facet].empty()) return pick(pure_pool[facet]);
    if (!noise_pool.empty()) return pick(noise_pool);
    if (!pure_pool[facet].empty()) return pick(pure_pool[facet]);
    return base + static_cast<int>(rng.uniform_index(n));
  };

  for (int a = 0; a < n; ++a) {
    for (int e = 0; e < spec.avg_degree_ab; ++e) {
      const bool pure = rng.uniform() >= spec.noise;
      edges.emplace_back(a, pick_bridge(facet_of_a[a], pure, b_pure_of_facet,
                                        b_noise, n));
    }
  }
  for (int bi = 0; bi < n; ++bi) {
    const int b = n + bi;
    const int fb = bi % k;
    for (int e = 0; e < spec.avg_degree_bc; ++e) {
      // Promiscuous bridges wire to arbitrary attributes.
      const bool pure = pure_b[bi] && rng.uniform() >= spec.noise;
      edges.emplace_back(b, pick_bridge(fb, pure, c_pure_of_facet, c_noise, 2 * n));
    }
  }
  for (int a = 0; a < n; ++a) {
    for (int e = 0; e < spec.aa_edges_per_node; ++e) {
      const bool pure = rng.uniform() >= spec.noise;
      int other;
      int guard = 0;
      do {
        other = pure ? pick(a_of_facet[facet_of_a[a]])
                     : static_cast<int>(rng.uniform_index(n));
        if (++guard > 10000) throw ConfigError("synthetic: cannot place A-A edge");
      } while (other == a);
      edges.emplace_back(a, other);
    }
  }

  std::map<int, int> labels;
  for (int a = 0; a < n; ++a) labels[a] = class_of_a[a];

  SyntheticGraph out{
      HeteroGraph::build(std::move(node_type), {"A", "B", "C"}, edges,
                         std::move(labels), {}, 0),
      std::move(facet_of_a), std::move(class_of_a)};
  return out;
}

SplitAssignment make_split(const std::vector<int>& items, SplitRatios ratios,
                           std::uint64_t seed) {
  if (items.empty()) throw ConfigError("make_split: empty input");
  const double total = ratios.train + ratios.val + ratios.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("make_split: ratios must sum to 1");
  }
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw ConfigError("make_split: negative ratio");
  }

  std::vector<int> order = items;
  Rng rng(Rng::mix(seed, 0x5b111ULL));
  // Fisher-Yates with our own rng for cross-platform reproducibility.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(order[i - 1], order[j]);
  }

  const std::size_t n = order.size();
  const std::size_t n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * ratios.val));
  const std::size_t n_test = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * ratios.test));
  const std::size_t n_train = n - n_val - n_test;

  SplitAssignment s;
  s.ratios = ratios;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

HeteroGraph remove_edges(const HeteroGraph& g,
                         const std::vector<std::pair<int, int>>& edges) {
  std::set<std::pair<int, int>> drop;
  for (auto [a, b] : edges) {
    drop.emplace(std::min(a, b), std::max(a, b));
  }
  std::vector<std::pair<int, int>> kept;
  for (const auto& e : g.undirected_edges()) {
    if (!drop.count(e)) kept.push_back(e);
  }
  std::vector<int> types(g.num_nodes());
  for (int v = 0; v < g.num_nodes(); ++v) types[v] = g.node_type(v);
  std::optional<int> tt;
  if (g.has_target_type()) tt = g.target_type();
  return HeteroGraph::build(std::move(types), g.type_names(), kept, g.labels(),
                            g.features_by_type(), tt);
}

}  // namespace facetpath
