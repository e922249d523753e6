#include <doctest.h>

#include <set>
#include <sstream>

#include "facetpath/errors.hpp"
#include "facetpath/walker.hpp"
#include "test_support.hpp"

using namespace facetpath;

namespace {

std::string dump_subgraph(const FacetSubgraph& sub) {
  std::ostringstream os;
  for (const SubgraphEdge& e : sub.edges) {
    os << e.a;
    for (int s : e.intermediates) os << ' ' << s;
    os << ' ' << e.b << '\n';
  }
  return os.str();
}

}  // namespace

TEST_CASE("random_walk on a chain finds the only path") {
  HeteroGraph g = HeteroGraph::build({0, 1, 0}, {"A", "B"}, {{0, 1}, {1, 2}}, {}, {}, 0);
  WalkConfig cfg;
  cfg.path_length = 5;
  Rng rng(1);
  auto p = random_walk(g, 0, cfg, rng);
  REQUIRE(p.has_value());
  CHECK(p->nodes == std::vector<int>{0, 1, 2});
}

TEST_CASE("random_walk from an isolated node returns none") {
  HeteroGraph g = HeteroGraph::build({0, 1, 0}, {"A", "B"}, {{1, 2}}, {}, {}, 0);
  WalkConfig cfg;
  Rng rng(1);
  CHECK(!random_walk(g, 0, cfg, rng).has_value());
}

TEST_CASE("random_walk rejects a wrong-type start") {
  HeteroGraph g = HeteroGraph::build({0, 1, 0}, {"A", "B"}, {{0, 1}, {1, 2}}, {}, {}, 0);
  WalkConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(random_walk(g, 1, cfg, rng), ContractError);
}

TEST_CASE("triangle with a single target node never yields a path") {
  // A0-B1, B1-B2, B2-A0: every walk returning to a target node returns to
  // the start, so the early-stop rule discards it.
  HeteroGraph g = HeteroGraph::build({0, 1, 1}, {"A", "B"},
                                     {{0, 1}, {1, 2}, {2, 0}}, {}, {}, 0);
  WalkConfig cfg;
  cfg.path_length = 5;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    CHECK(!random_walk(g, 0, cfg, rng).has_value());
  }
  // The enumeration oracle agrees: no reachable pair exists.
  CHECK(testsupport::reachable_pairs_early_stop(g, 5).empty());
}

TEST_CASE("build_subgraph on a chain yields the single edge") {
  HeteroGraph g = HeteroGraph::build({0, 1, 0}, {"A", "B"}, {{0, 1}, {1, 2}}, {}, {}, 0);
  WalkConfig cfg;
  cfg.attempts = 50;
  FacetSubgraph sub = build_subgraph(g, cfg);
  REQUIRE(sub.edges.size() == 1);
  CHECK(sub.edges[0].a == 0);
  CHECK(sub.edges[0].b == 2);
  CHECK(sub.edges[0].intermediates == std::vector<int>{1});
  CHECK(sub.target_ids == std::vector<int>{0, 2});
}

TEST_CASE("attempt saturation: more attempts add no new pairs on the chain") {
  HeteroGraph g = HeteroGraph::build({0, 1, 0}, {"A", "B"}, {{0, 1}, {1, 2}}, {}, {}, 0);
  WalkConfig one;
  one.attempts = 1;
  WalkConfig many;
  many.attempts = 1000;
  FacetSubgraph a = build_subgraph(g, one);
  FacetSubgraph b = build_subgraph(g, many);
  CHECK(dump_subgraph(a) == dump_subgraph(b));
}

TEST_CASE("planted synthetic with zero noise connects same-facet endpoints") {
  SyntheticSpec spec;
  spec.n_per_type = 50;
  spec.k_facets = 5;
  spec.n_classes = 5;
  spec.noise = 0.0;
  spec.seed = 3;
  SyntheticGraph sg = generate_synthetic(spec);
  WalkConfig cfg;
  cfg.attempts = 200;
  cfg.seed = 3;
  FacetSubgraph sub = build_subgraph(sg.graph, cfg);
  REQUIRE(sub.edges.size() > 0);
  for (const SubgraphEdge& e : sub.edges) {
    CHECK(sg.facet_of_a[e.a] == sg.facet_of_a[e.b]);
  }
}

TEST_CASE("fuzz: paths valid, pairs within the enumeration oracle, dedup") {
  Rng rng(2024);
  WalkConfig cfg;
  cfg.path_length = 5;
  cfg.attempts = 60;
  for (int trial = 0; trial < 100; ++trial) {
    HeteroGraph g = testsupport::random_graph(rng, 30);
    cfg.seed = trial;
    for (bool strict : {false, true}) {
      cfg.strict_f1 = strict;
      FacetSubgraph sub = build_subgraph(g, cfg);
      const auto oracle = strict
                              ? testsupport::reachable_pairs_strict(g, cfg.path_length)
                              : testsupport::reachable_pairs_early_stop(g, cfg.path_length);
      std::set<std::pair<int, int>> seen;
      for (const SubgraphEdge& e : sub.edges) {
        PathRecord p;
        p.nodes.push_back(e.a);
        p.nodes.insert(p.nodes.end(), e.intermediates.begin(), e.intermediates.end());
        p.nodes.push_back(e.b);
        CHECK(validate_path(g, p, cfg) == "");
        CHECK(oracle.count({e.a, e.b}) == 1);
        CHECK(seen.emplace(e.a, e.b).second);  // dedup
      }
    }
  }
}

TEST_CASE("strict mode emits only full-length paths") {
  Rng rng(55);
  WalkConfig cfg;
  cfg.path_length = 4;
  cfg.attempts = 40;
  cfg.strict_f1 = true;
  for (int trial = 0; trial < 20; ++trial) {
    HeteroGraph g = testsupport::random_graph(rng, 20);
    cfg.seed = 1000 + trial;
    FacetSubgraph sub = build_subgraph(g, cfg);
    for (const SubgraphEdge& e : sub.edges) {
      CHECK(e.intermediates.size() == static_cast<std::size_t>(cfg.path_length) - 1);
    }
  }
}

TEST_CASE("worker count does not change the result") {
  SyntheticSpec spec;
  spec.n_per_type = 40;
  spec.k_facets = 3;
  spec.n_classes = 3;
  spec.noise = 0.2;
  spec.seed = 9;
  SyntheticGraph sg = generate_synthetic(spec);
  WalkConfig cfg;
  cfg.attempts = 100;
  cfg.seed = 4;
  const std::string one = dump_subgraph(build_subgraph(sg.graph, cfg, 1));
  const std::string four = dump_subgraph(build_subgraph(sg.graph, cfg, 4));
  const std::string eight = dump_subgraph(build_subgraph(sg.graph, cfg, 8));
  CHECK(one == four);
  CHECK(one == eight);
  CHECK(!one.empty());
}

TEST_CASE("same config twice gives identical subgraphs") {
  Rng rng(77);
  HeteroGraph g = testsupport::random_graph(rng, 25);
  WalkConfig cfg;
  cfg.attempts = 50;
  cfg.seed = 11;
  CHECK(dump_subgraph(build_subgraph(g, cfg)) ==
        dump_subgraph(build_subgraph(g, cfg)));
}

TEST_CASE("config validation") {
  WalkConfig cfg;
  cfg.path_length = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.path_length = 2;
  cfg.attempts = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero-edge subgraph is valid output") {
  // Two disconnected A nodes: no pairs reachable.
  HeteroGraph g = HeteroGraph::build({0, 0, 1}, {"A", "B"}, {{0, 2}}, {}, {}, 0);
  WalkConfig cfg;
  FacetSubgraph sub = build_subgraph(g, cfg);
  CHECK(sub.edges.empty());
  CHECK(sub.target_ids == std::vector<int>{0, 1});
}
