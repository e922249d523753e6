#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "facetpath/bench.hpp"
#include "facetpath/errors.hpp"
#include "facetpath/eval.hpp"
#include "facetpath/hetgraph.hpp"
#include "facetpath/model.hpp"
#include "facetpath/training.hpp"
#include "facetpath/walker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_config(const json& j, facetpath::TrainConfig& cfg,
                  facetpath::HyperParams& hp, facetpath::WalkConfig& walk) {
  using facetpath::edge_weight_mode_from_string;
  if (j.contains("lr")) cfg.lr = j["lr"];
  if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"];
  if (j.contains("max_epochs")) cfg.max_epochs = j["max_epochs"];
  if (j.contains("patience")) cfg.patience = j["patience"];
  if (j.contains("neg_per_pos")) cfg.neg_per_pos = j["neg_per_pos"];
  if (j.contains("warmup_epochs")) cfg.warmup_epochs = j["warmup_epochs"];
  if (j.contains("seeds")) {
    cfg.seeds.clear();
    for (const auto& s : j["seeds"]) cfg.seeds.push_back(s.get<std::uint64_t>());
  }
  if (j.contains("ratios")) {
    cfg.ratios.train = j["ratios"].value("train", 0.8);
    cfg.ratios.val = j["ratios"].value("val", 0.1);
    cfg.ratios.test = j["ratios"].value("test", 0.1);
  }
  if (j.contains("facets")) hp.facets = j["facets"];
  if (j.contains("tau")) hp.tau = j["tau"];
  if (j.contains("layers")) hp.layers = j["layers"];
  if (j.contains("dim")) hp.dim = j["dim"];
  if (j.contains("dropout")) hp.dropout = j["dropout"];
  if (j.contains("edge_weight_mode")) {
    hp.edge_weight_mode = edge_weight_mode_from_string(j["edge_weight_mode"]);
  }
  if (j.contains("hard_select")) hp.hard_select = j["hard_select"];
  if (j.contains("walk")) {
    const json& w = j["walk"];
    if (w.contains("path_length")) walk.path_length = w["path_length"];
    if (w.contains("attempts")) walk.attempts = w["attempts"];
    if (w.contains("strict_f1")) walk.strict_f1 = w["strict_f1"];
    if (w.contains("seed")) walk.seed = w["seed"].get<std::uint64_t>();
  }
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw facetpath::ConfigError("cannot open " + path);
  json j;
  in >> j;
  return j;
}

facetpath::HeteroGraph load_graph_arg(const std::string& dir,
                                      const std::string& target_type) {
  return facetpath::load_graph(dir, target_type);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoull(tok));
  }
  return out;
}

int cmd_gen_synthetic(const std::string& out_dir, int n, int k, int classes,
                      double noise, std::uint64_t seed, int deg_ab, int deg_bc,
                      int aa_edges) {
  facetpath::SyntheticSpec spec;
  spec.n_per_type = n;
  spec.k_facets = k;
  spec.n_classes = classes;
  spec.noise = noise;
  spec.seed = seed;
  spec.avg_degree_ab = deg_ab;
  spec.avg_degree_bc = deg_bc;
  spec.aa_edges_per_node = aa_edges;
  facetpath::SyntheticGraph sg = facetpath::generate_synthetic(spec);
  facetpath::write_graph(sg.graph, out_dir);
  std::ofstream facets(fs::path(out_dir) / "facets.tsv");
  for (std::size_t a = 0; a < sg.facet_of_a.size(); ++a) {
    facets << a << '\t' << sg.facet_of_a[a] << '\n';
  }
  std::cout << "wrote " << out_dir << ": " << sg.graph.num_nodes() << " nodes, "
            << sg.graph.num_undirected_edges() << " edges\n";
  return 0;
}

int cmd_walk(const std::string& graph_dir, const std::string& target_type,
             const std::string& out, int len, int attempts, std::uint64_t seed,
             bool strict, int workers) {
  facetpath::HeteroGraph g = load_graph_arg(graph_dir, target_type);
  facetpath::WalkConfig cfg;
  cfg.path_length = len;
  cfg.attempts = attempts;
  cfg.seed = seed;
  cfg.strict_f1 = strict;
  facetpath::FacetSubgraph sub = facetpath::build_subgraph(g, cfg, workers);
  facetpath::write_paths(sub, out);
  std::cout << "wrote " << out << ": " << sub.num_edges() << " paths over "
            << sub.target_ids.size() << " target nodes\n";
  return 0;
}

int cmd_train(const std::string& graph_dir, const std::string& target_type,
              const std::string& task, const std::string& config_path,
              const std::string& seed_list, const std::string& out_dir,
              const std::string& checkpoint, const std::string& attention) {
  facetpath::HeteroGraph g = load_graph_arg(graph_dir, target_type);
  facetpath::TrainConfig cfg;
  facetpath::HyperParams hp;
  facetpath::WalkConfig walk;
  if (!config_path.empty()) apply_config(load_json(config_path), cfg, hp, walk);
  if (!seed_list.empty()) cfg.seeds = parse_seed_list(seed_list);
  cfg.task = task == "lp" ? facetpath::Task::LinkPrediction
                          : facetpath::Task::NodeClassification;

  fs::create_directories(out_dir);
  std::ofstream trace_out(fs::path(out_dir) / "trace.jsonl");

  facetpath::MetricsReport report;
  bool first = true;
  for (std::uint64_t seed : cfg.seeds) {
    facetpath::ProtocolRun run =
        facetpath::run_protocol_seed(g, cfg, hp, walk, seed);
    report.rows.push_back(run.row);
    for (std::size_t e = 0; e < run.result.trace.epochs.size(); ++e) {
      const auto& st = run.result.trace.epochs[e];
      trace_out << json{{"seed", seed},
                        {"epoch", e + 1},
                        {"train_loss", st.train_loss},
                        {"val_loss", st.val_loss},
                        {"ms", st.wall_ms}}
                       .dump()
                << '\n';
    }
    trace_out << json{{"seed", seed},
                      {"best_epoch", run.result.trace.best_epoch},
                      {"stop_reason", run.result.trace.stop_reason}}
                     .dump()
              << '\n';
    if (first) {
      if (!checkpoint.empty()) {
        facetpath::save_checkpoint(run.result.params, hp, checkpoint);
      }
      if (!attention.empty()) {
        const facetpath::HeteroGraph* eg = &g;
        facetpath::SubgraphPlan plan = facetpath::make_plan(*eg, run.subgraph);
        facetpath::AttentionExport att =
            facetpath::export_attention(*eg, plan, run.result.params, hp);
        facetpath::write_attention_csv(att, *eg, attention);
      }
      first = false;
    }
  }

  std::ofstream csv(fs::path(out_dir) / "results.csv");
  csv << report.to_csv();
  std::ofstream js(fs::path(out_dir) / "results.json");
  js << report.to_json();
  std::cout << report.to_csv();
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& true_path,
             const std::string& metric) {
  // labels.tsv: id <tab> class
  std::map<int, int> truth;
  {
    std::ifstream in(true_path);
    if (!in) throw facetpath::ConfigError("cannot open " + true_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream iss(line);
      int id, cls;
      if (iss >> id >> cls) truth[id] = cls;
    }
  }
  // pred.csv: id,value[,value...]
  std::vector<int> ids;
  std::vector<std::vector<double>> values;
  {
    std::ifstream in(pred_path);
    if (!in) throw facetpath::ConfigError("cannot open " + pred_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> row;
      bool first = true;
      int id = 0;
      while (std::getline(ss, cell, ',')) {
        if (first) {
          id = std::stoi(cell);
          first = false;
        } else {
          row.push_back(std::stod(cell));
        }
      }
      ids.push_back(id);
      values.push_back(std::move(row));
    }
  }
  std::vector<int> y_true, y_pred;
  std::vector<double> scores;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = truth.find(ids[i]);
    if (it == truth.end()) {
      throw facetpath::MetricError("no true label for id " + std::to_string(ids[i]));
    }
    y_true.push_back(it->second);
    if (!values[i].empty()) {
      scores.push_back(values[i][0]);
      y_pred.push_back(static_cast<int>(values[i][0]));
    }
  }
  if (metric == "f1") {
    std::cout << "micro_f1=" << facetpath::micro_f1(y_pred, y_true) << '\n'
              << "macro_f1=" << facetpath::macro_f1(y_pred, y_true) << '\n';
  } else if (metric == "auc") {
    if (!values.empty() && values[0].size() > 1) {
      facetpath::Tensor probs(values.size(), values[0].size());
      for (std::size_t i = 0; i < values.size(); ++i) {
        for (std::size_t j = 0; j < values[i].size(); ++j) {
          probs.at(i, j) = values[i][j];
        }
      }
      std::cout << "auc_ovr=" << facetpath::auc_ovr(probs, y_true) << '\n';
    } else {
      std::cout << "auc=" << facetpath::auc(scores, y_true) << '\n';
    }
  } else if (metric == "nmi") {
    std::cout << "nmi=" << facetpath::nmi(y_pred, y_true) << '\n';
  } else if (metric == "ari") {
    std::cout << "ari=" << facetpath::ari(y_pred, y_true) << '\n';
  } else {
    throw facetpath::ConfigError("unknown metric '" + metric + "'");
  }
  return 0;
}

int cmd_ablate(const std::string& spec_path, const std::string& out_csv,
               const std::string& out_json) {
  const json j = load_json(spec_path);
  facetpath::AblationSpec spec;
  spec.axis = facetpath::ablation_axis_from_string(j.at("axis"));
  for (const auto& v : j.at("values")) {
    if (v.is_string()) {
      spec.values.push_back(v.get<std::string>());
    } else {
      std::ostringstream os;
      os << v;
      spec.values.push_back(os.str());
    }
  }
  if (j.contains("config")) {
    apply_config(j["config"], spec.config, spec.hyper, spec.walk);
  }
  if (j.contains("task")) {
    spec.config.task = j["task"] == "lp" ? facetpath::Task::LinkPrediction
                                         : facetpath::Task::NodeClassification;
  }

  facetpath::HeteroGraph g = [&]() {
    const json& ds = j.at("dataset");
    if (ds.contains("dir")) {
      return facetpath::load_graph(ds["dir"], ds.value("target_type", ""));
    }
    facetpath::SyntheticSpec ss;
    const json& sj = ds.at("synthetic");
    ss.n_per_type = sj.value("n", 100);
    ss.k_facets = sj.value("k", 5);
    ss.n_classes = sj.value("classes", 3);
    ss.noise = sj.value("noise", 0.0);
    ss.seed = sj.value("seed", 1);
    ss.avg_degree_ab = sj.value("deg_ab", 4);
    ss.avg_degree_bc = sj.value("deg_bc", 2);
    ss.aa_edges_per_node = sj.value("aa_edges", 0);
    return facetpath::generate_synthetic(ss).graph;
  }();

  facetpath::MetricsReport report = facetpath::run_ablation(g, spec);
  std::ofstream csv(out_csv);
  csv << report.to_csv();
  if (!out_json.empty()) {
    std::ofstream js(out_json);
    js << report.to_json();
  }
  std::cout << report.to_csv();
  return 0;
}

int cmd_timing(const std::string& graph_dir, const std::string& target_type,
               const std::string& ks_csv, const std::string& out,
               int epochs) {
  facetpath::HeteroGraph g = load_graph_arg(graph_dir, target_type);
  std::vector<int> ks;
  std::stringstream ss(ks_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) ks.push_back(std::stoi(tok));
  }
  facetpath::HyperParams hp;
  facetpath::WalkConfig walk;
  facetpath::TimingReport rep = facetpath::time_scaling(g, ks, hp, walk, epochs);
  std::cout << rep.to_csv();
  if (!out.empty()) {
    std::ofstream f(out);
    f << rep.to_csv();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facetpath: multi-facet path embeddings for heterogeneous graphs"};
  app.require_subcommand(1);

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "generate a planted-facet graph");
  std::string gen_out = "synthetic";
  int gen_n = 150, gen_k = 5, gen_classes = 3, gen_deg_ab = 4, gen_deg_bc = 2,
      gen_aa = 0;
  double gen_noise = 0.1;
  std::uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_n, "nodes per type");
  gen->add_option("--k", gen_k, "number of planted facets");
  gen->add_option("--classes", gen_classes, "number of classes");
  gen->add_option("--noise", gen_noise, "edge rewiring noise in [0,1)");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--deg-ab", gen_deg_ab, "A-B edges per A node");
  gen->add_option("--deg-bc", gen_deg_bc, "B-C edges per B node");
  gen->add_option("--aa-edges", gen_aa, "direct A-A edges per node (link tasks)");

  // walk
  auto* walk = app.add_subcommand("walk", "extract paths and dump paths.tsv");
  std::string walk_graph, walk_out = "paths.tsv", walk_target;
  int walk_len = 5, walk_attempts = 1000, walk_workers = 1;
  std::uint64_t walk_seed = 0;
  bool walk_strict = false;
  walk->add_option("--graph", walk_graph, "graph directory")->required();
  walk->add_option("--out", walk_out, "output paths.tsv");
  walk->add_option("--len", walk_len, "max walk length (edges)");
  walk->add_option("--attempts", walk_attempts, "trials per start node");
  walk->add_option("--seed", walk_seed, "rng seed");
  walk->add_option("--workers", walk_workers, "worker threads");
  walk->add_option("--target-type", walk_target, "target type name");
  walk->add_flag("--strict-f1", walk_strict, "fixed-length walk variant");

  // train
  auto* train = app.add_subcommand("train", "run the seeded training protocol");
  std::string train_graph, train_task = "nc", train_config, train_seeds,
              train_out = "runs", train_target, train_ckpt, train_att;
  train->add_option("--graph", train_graph, "graph directory")->required();
  train->add_option("--task", train_task, "nc|lp")
      ->check(CLI::IsMember({"nc", "lp"}));
  train->add_option("--config", train_config, "cfg.json");
  train->add_option("--seed-list", train_seeds, "comma-separated seeds");
  train->add_option("--out-dir", train_out, "output directory");
  train->add_option("--target-type", train_target, "target type name");
  train->add_option("--save-checkpoint", train_ckpt, "checkpoint file");
  train->add_option("--export-attention", train_att, "attention CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against labels");
  std::string ev_pred, ev_true, ev_metric = "f1";
  ev->add_option("--pred", ev_pred, "pred.csv (id,value...)")->required();
  ev->add_option("--true", ev_true, "labels.tsv")->required();
  ev->add_option("--metric", ev_metric, "f1|auc|nmi|ari")
      ->check(CLI::IsMember({"f1", "auc", "nmi", "ari"}));

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation sweep");
  std::string ab_spec, ab_out = "report.csv", ab_json;
  ab->add_option("--spec", ab_spec, "spec.json")->required();
  ab->add_option("--out", ab_out, "report CSV");
  ab->add_option("--json", ab_json, "report JSON");

  // timing
  auto* tm = app.add_subcommand("timing", "per-epoch time vs facet count");
  std::string tm_graph, tm_ks = "1,2,4,8", tm_out, tm_target;
  int tm_epochs = 25;
  tm->add_option("--graph", tm_graph, "graph directory")->required();
  tm->add_option("--k", tm_ks, "comma-separated facet counts");
  tm->add_option("--out", tm_out, "output CSV");
  tm->add_option("--epochs", tm_epochs, "timed epochs per K");
  tm->add_option("--target-type", tm_target, "target type name");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_synthetic(gen_out, gen_n, gen_k, gen_classes, gen_noise,
                               gen_seed, gen_deg_ab, gen_deg_bc, gen_aa);
    }
    if (walk->parsed()) {
      return cmd_walk(walk_graph, walk_target, walk_out, walk_len,
                      walk_attempts, walk_seed, walk_strict, walk_workers);
    }
    if (train->parsed()) {
      return cmd_train(train_graph, train_target, train_task, train_config,
                       train_seeds, train_out, train_ckpt, train_att);
    }
    if (ev->parsed()) return cmd_eval(ev_pred, ev_true, ev_metric);
    if (ab->parsed()) return cmd_ablate(ab_spec, ab_out, ab_json);
    if (tm->parsed()) return cmd_timing(tm_graph, tm_target, tm_ks, tm_out, tm_epochs);
  } catch (const facetpath::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
