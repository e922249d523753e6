#include "facetpath/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "facetpath/adam.hpp"
#include "facetpath/errors.hpp"
#include "facetpath/eval.hpp"

namespace facetpath {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train: lr must be > 0");
  if (max_epochs < 0) throw ConfigError("train: max_epochs must be >= 0");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (seeds.empty()) throw ConfigError("train: seeds must be nonempty");
  if (neg_per_pos < 1) throw ConfigError("train: neg_per_pos must be >= 1");
}

VarId loss_nc(Tape& tape, VarId probs, const std::vector<int>& labels) {
  if (tape.value(probs).rows() != labels.size()) {
    throw ShapeError("loss_nc: label count != probability rows");
  }
  VarId picked = tape.take_per_row(probs, labels);
  VarId logs = tape.log_clamped(picked);
  return tape.scale(tape.sum_all(logs), -1.0);
}

namespace {

VarId pair_scores(Tape& tape, VarId embeddings,
                  const std::vector<std::pair<int, int>>& pairs) {
  std::vector<int> u, v;
  u.reserve(pairs.size());
  v.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    u.push_back(a);
    v.push_back(b);
  }
  VarId hu = tape.gather_rows(embeddings, u);
  VarId hv = tape.gather_rows(embeddings, v);
  return tape.row_sum(tape.hadamard(hu, hv));
}

}  // namespace

VarId loss_lp(Tape& tape, VarId embeddings,
              const std::vector<std::pair<int, int>>& positives,
              const std::vector<std::pair<int, int>>& negatives) {
  if (positives.empty()) throw ContractError("loss_lp: no positive pairs");
  VarId pos = pair_scores(tape, embeddings, positives);
  VarId loss = tape.scale(tape.sum_all(tape.log_sigmoid(pos)), -1.0);
  if (!negatives.empty()) {
    VarId neg = tape.scale(pair_scores(tape, embeddings, negatives), -1.0);
    VarId neg_loss = tape.scale(tape.sum_all(tape.log_sigmoid(neg)), -1.0);
    loss = tape.add(loss, neg_loss);
  }
  return loss;
}

std::vector<std::pair<int, int>> sample_negatives(
    const HeteroGraph& g, const std::vector<std::pair<int, int>>& positives,
    Rng& rng, int neg_per_pos) {
  const std::vector<int> candidates = g.nodes_of_type(g.target_type());
  std::vector<std::pair<int, int>> out;
  out.reserve(positives.size() * neg_per_pos);
  for (const auto& [u, v] : positives) {
    (void)v;
    for (int r = 0; r < neg_per_pos; ++r) {
      bool found = false;
      for (int trial = 0; trial < 1000; ++trial) {
        const int cand = candidates[rng.uniform_index(candidates.size())];
        if (cand == u || g.has_edge(u, cand)) continue;
        out.emplace_back(u, cand);
        found = true;
        break;
      }
      if (!found) {
        throw SamplingError("sample_negatives: no admissible node for " +
                            std::to_string(u) + " after 1000 trials");
      }
    }
  }
  return out;
}

namespace {

std::vector<std::pair<int, int>> to_rows(const SubgraphPlan& plan,
                                         const std::vector<std::pair<int, int>>& pairs) {
  std::vector<std::pair<int, int>> rows;
  rows.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const int ra = plan.row_of(a);
    const int rb = plan.row_of(b);
    if (ra < 0 || rb < 0) {
      throw ContractError("link pair endpoint is not a target-type node");
    }
    rows.emplace_back(ra, rb);
  }
  return rows;
}

std::vector<int> rows_and_labels(const SubgraphPlan& plan, const HeteroGraph& g,
                                 const std::vector<int>& nodes,
                                 std::vector<int>& labels_out) {
  std::vector<int> rows;
  rows.reserve(nodes.size());
  labels_out.clear();
  for (int id : nodes) {
    const int r = plan.row_of(id);
    if (r < 0) throw ContractError("labeled node is not a target-type node");
    rows.push_back(r);
    labels_out.push_back(g.labels().at(id));
  }
  return rows;
}

struct LossContext {
  // NC
  std::vector<int> train_rows, val_rows;
  std::vector<int> train_labels, val_labels;
  // LP (plan rows)
  std::vector<std::pair<int, int>> train_pairs, val_pairs, val_negs;
};

double compute_loss(Tape& tape, const ForwardResult& fw, Task task,
                    const LossContext& ctx, bool validation, VarId* loss_out) {
  VarId loss;
  if (task == Task::NodeClassification) {
    const auto& rows = validation ? ctx.val_rows : ctx.train_rows;
    const auto& labels = validation ? ctx.val_labels : ctx.train_labels;
    VarId sub = tape.gather_rows(fw.class_probs, rows);
    loss = loss_nc(tape, sub, labels);
  } else {
    const auto& pos = validation ? ctx.val_pairs : ctx.train_pairs;
    if (validation) {
      loss = loss_lp(tape, fw.node_embeddings, pos, ctx.val_negs);
    } else {
      loss = -1;  // caller supplies fresh negatives; see train_model
    }
  }
  if (loss_out != nullptr) *loss_out = loss;
  return loss >= 0 ? tape.value(loss)[0] : 0.0;
}

}  // namespace

TrainResult train_model(const HeteroGraph& g, const FacetSubgraph& sub,
                        const TrainConfig& cfg, const HyperParams& hp,
                        const TaskSplit& split, std::uint64_t seed) {
  cfg.validate();
  hp.validate();
  if (sub.edges.empty()) throw TrainError("train: empty facet subgraph");

  const SubgraphPlan plan = make_plan(g, sub);

  LossContext ctx;
  if (cfg.task == Task::NodeClassification) {
    if (split.train_nodes.empty()) throw ConfigError("train: empty training split");
    if (split.val_nodes.empty()) throw ConfigError("train: empty validation split");
    ctx.train_rows = rows_and_labels(plan, g, split.train_nodes, ctx.train_labels);
    ctx.val_rows = rows_and_labels(plan, g, split.val_nodes, ctx.val_labels);
  } else {
    if (split.train_pairs.empty()) throw ConfigError("train: empty training split");
    if (split.val_pairs.empty()) throw ConfigError("train: empty validation split");
    ctx.train_pairs = to_rows(plan, split.train_pairs);
    ctx.val_pairs = to_rows(plan, split.val_pairs);
    Rng neg_rng(Rng::mix(seed, 0x5a1fULL));
    auto val_negs = sample_negatives(g, split.val_pairs, neg_rng, cfg.neg_per_pos);
    ctx.val_negs = to_rows(plan, val_negs);
  }

  const int num_classes =
      cfg.task == Task::NodeClassification ? g.num_classes() : 0;
  ModelParams params = init_params(g, hp, num_classes, seed);

  TrainTrace trace;
  trace.warmup_loss = warm_up(
      g, params,
      WarmUpOptions{cfg.warmup_epochs, cfg.lr, cfg.weight_decay, true, 1e-4, 5},
      Rng::mix(seed, 0x3a3aULL));

  // Prime the batch-norm running statistics with one noise-free pass so the
  // eval-mode validation of epoch 1 sees the actual normalization instead of
  // the cold (0, 1) defaults.
  {
    HyperParams quiet = hp;
    quiet.dropout = 0.0;
    quiet.gumbel_noise = false;
    Rng prime_rng(Rng::mix(seed, 0x9f13ULL));  // Random mode still selects
    for (BatchNormState& st : params.bn_state) st.momentum = 1.0;
    Tape tape;
    ParamLeaves lv = stage_params(tape, params, false);
    model_forward(tape, lv, params, plan, quiet, Mode::Train, &prime_rng);
    for (BatchNormState& st : params.bn_state) st.momentum = 0.1;
  }

  AdamState adam(AdamConfig{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8});
  Rng train_rng(Rng::mix(seed, 0x7411ULL));
  Rng lp_neg_rng(Rng::mix(seed, 0x9e6ULL));

  ModelParams best = params;
  double best_val = std::numeric_limits<double>::infinity();
  int stall = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    Tape tape;
    ParamLeaves lv = stage_params(tape, params, true);
    ForwardResult fw =
        model_forward(tape, lv, params, plan, hp, Mode::Train, &train_rng);
    VarId loss = -1;
    if (cfg.task == Task::NodeClassification) {
      compute_loss(tape, fw, cfg.task, ctx, false, &loss);
    } else {
      auto negs = sample_negatives(g, split.train_pairs, lp_neg_rng, cfg.neg_per_pos);
      loss = loss_lp(tape, fw.node_embeddings, ctx.train_pairs, to_rows(plan, negs));
    }
    const double train_loss = tape.value(loss)[0];
    if (!std::isfinite(train_loss)) {
      throw TrainError("train: non-finite loss at epoch " + std::to_string(epoch));
    }

    tape.backward(loss);
    adam.begin_step();
    params.visit_trainables([&](const std::string& name, Tensor& t) {
      VarId id = -1;
      if (name == "E") id = lv.embeddings;
      else if (name == "W_B") id = lv.facet_scorer;
      else if (name == "W_C") id = lv.classifier_w;
      else if (name == "b_C") id = lv.classifier_b;
      else if (name.rfind("W_A.", 0) == 0) id = lv.facet_proj[std::stoul(name.substr(4))];
      else if (name.rfind("bn.gamma.", 0) == 0) id = lv.bn_gamma[std::stoul(name.substr(9))];
      else if (name.rfind("bn.beta.", 0) == 0) id = lv.bn_beta[std::stoul(name.substr(8))];
      if (id >= 0) adam.update(name, t, tape.grad(id));
    });

    // Validation in eval mode on the updated parameters.
    Tape vtape;
    ParamLeaves vlv = stage_params(vtape, params, false);
    ForwardResult vfw =
        model_forward(vtape, vlv, params, plan, hp, Mode::Eval, nullptr);
    VarId vloss = -1;
    compute_loss(vtape, vfw, cfg.task, ctx, true, &vloss);
    const double val_loss = vtape.value(vloss)[0];
    if (!std::isfinite(val_loss)) {
      throw TrainError("train: non-finite validation loss at epoch " +
                       std::to_string(epoch));
    }

    const auto t1 = std::chrono::steady_clock::now();
    trace.epochs.push_back(EpochStats{
        train_loss, val_loss,
        std::chrono::duration<double, std::milli>(t1 - t0).count()});

    if (val_loss < best_val - 1e-6) {
      best_val = val_loss;
      best = params;
      trace.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= cfg.patience) {
      trace.stop_reason = "early stop (patience " + std::to_string(cfg.patience) + ")";
      break;
    }
  }
  if (trace.stop_reason.empty()) trace.stop_reason = "max epochs";
  if (trace.best_epoch == 0 && !trace.epochs.empty()) {
    // Validation never improved over +inf cannot happen, but stay safe.
    trace.best_epoch = 1;
  }

  return TrainResult{std::move(best), std::move(trace)};
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() <= 1) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::vector<MetricsReport::Aggregate> MetricsReport::aggregates() const {
  std::vector<Aggregate> out;
  std::vector<std::string> order;
  for (const ReportRow& r : rows) {
    if (std::find(order.begin(), order.end(), r.axis) == order.end()) {
      order.push_back(r.axis);
    }
  }
  for (const std::string& axis : order) {
    std::vector<double> auc_v, mi_v, ma_v, nmi_v, ari_v, be_v, ep_v, ms_v;
    for (const ReportRow& r : rows) {
      if (r.axis != axis) continue;
      auc_v.push_back(r.auc);
      mi_v.push_back(r.micro_f1);
      ma_v.push_back(r.macro_f1);
      nmi_v.push_back(r.nmi);
      ari_v.push_back(r.ari);
      be_v.push_back(r.best_epoch);
      ep_v.push_back(r.epochs);
      ms_v.push_back(r.wall_ms);
    }
    Aggregate a;
    a.axis = axis;
    a.count = static_cast<int>(auc_v.size());
    a.mean = ReportRow{axis, 0, mean_of(auc_v), mean_of(mi_v), mean_of(ma_v),
                       mean_of(nmi_v), mean_of(ari_v),
                       static_cast<int>(mean_of(be_v)),
                       static_cast<int>(mean_of(ep_v)), mean_of(ms_v)};
    a.stddev = ReportRow{axis, 0, std_of(auc_v), std_of(mi_v), std_of(ma_v),
                         std_of(nmi_v), std_of(ari_v),
                         static_cast<int>(std_of(be_v)),
                         static_cast<int>(std_of(ep_v)), std_of(ms_v)};
    out.push_back(std::move(a));
  }
  return out;
}

std::string MetricsReport::to_csv(bool with_timing) const {
  std::ostringstream os;
  os << "axis,seed,auc,micro_f1,macro_f1,nmi,ari,best_epoch,epochs";
  if (with_timing) os << ",wall_ms";
  os << '\n';
  auto emit = [&](const std::string& axis, const std::string& seed,
                  const ReportRow& r) {
    os << axis << ',' << seed << ',' << fmt(r.auc) << ',' << fmt(r.micro_f1)
       << ',' << fmt(r.macro_f1) << ',' << fmt(r.nmi) << ',' << fmt(r.ari)
       << ',' << r.best_epoch << ',' << r.epochs;
    if (with_timing) os << ',' << fmt(r.wall_ms);
    os << '\n';
  };
  for (const ReportRow& r : rows) emit(r.axis, std::to_string(r.seed), r);
  for (const Aggregate& a : aggregates()) {
    emit(a.axis, "mean", a.mean);
    emit(a.axis, "std", a.stddev);
  }
  return os.str();
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const ReportRow& r : rows) {
    j["rows"].push_back({{"axis", r.axis},
                         {"seed", r.seed},
                         {"auc", r.auc},
                         {"micro_f1", r.micro_f1},
                         {"macro_f1", r.macro_f1},
                         {"nmi", r.nmi},
                         {"ari", r.ari},
                         {"best_epoch", r.best_epoch},
                         {"epochs", r.epochs},
                         {"wall_ms", r.wall_ms}});
  }
  j["aggregates"] = nlohmann::json::array();
  for (const Aggregate& a : aggregates()) {
    j["aggregates"].push_back(
        {{"axis", a.axis},
         {"count", a.count},
         {"mean",
          {{"auc", a.mean.auc},
           {"micro_f1", a.mean.micro_f1},
           {"macro_f1", a.mean.macro_f1},
           {"nmi", a.mean.nmi},
           {"ari", a.mean.ari}}},
         {"std",
          {{"auc", a.stddev.auc},
           {"micro_f1", a.stddev.micro_f1},
           {"macro_f1", a.stddev.macro_f1},
           {"nmi", a.stddev.nmi},
           {"ari", a.stddev.ari}}}});
  }
  return j.dump(2);
}

namespace {

std::vector<std::pair<int, int>> target_pairs(const HeteroGraph& g) {
  std::vector<std::pair<int, int>> out;
  const int target = g.target_type();
  for (const auto& [a, b] : g.undirected_edges()) {
    if (g.node_type(a) == target && g.node_type(b) == target) {
      out.emplace_back(a, b);
    }
  }
  return out;
}

}  // namespace

ProtocolRun run_protocol_seed(const HeteroGraph& g, const TrainConfig& cfg,
                              const HyperParams& hp, const WalkConfig& walk,
                              std::uint64_t seed) {
  cfg.validate();
  ProtocolRun run;
  run.row.seed = seed;

  WalkConfig wcfg = walk;
  wcfg.seed = Rng::mix(seed, 0x77a1cULL);

  const auto t0 = std::chrono::steady_clock::now();

  if (cfg.task == Task::NodeClassification) {
    std::vector<int> labeled;
    for (const auto& [id, cls] : g.labels()) {
      (void)cls;
      labeled.push_back(id);
    }
    if (labeled.empty()) throw ConfigError("protocol: graph has no labels");
    SplitAssignment sp = make_split(labeled, cfg.ratios, seed);
    run.split.train_nodes = sp.train;
    run.split.val_nodes = sp.val;
    run.split.test_nodes = sp.test;

    run.subgraph = build_subgraph(g, wcfg);
    run.result = train_model(g, run.subgraph, cfg, hp, run.split, seed);

    // Evaluate on the test nodes.
    const SubgraphPlan plan = make_plan(g, run.subgraph);
    Tape tape;
    ParamLeaves lv = stage_params(tape, run.result.params, false);
    ForwardResult fw =
        model_forward(tape, lv, run.result.params, plan, hp, Mode::Eval, nullptr);
    const Tensor& probs = tape.value(fw.class_probs);
    const Tensor& emb = tape.value(fw.node_embeddings);

    std::vector<int> truth, pred;
    Tensor test_probs(run.split.test_nodes.size(), probs.cols());
    Tensor test_emb(run.split.test_nodes.size(), emb.cols());
    for (std::size_t i = 0; i < run.split.test_nodes.size(); ++i) {
      const int id = run.split.test_nodes[i];
      const int r = plan.row_of(id);
      truth.push_back(g.labels().at(id));
      int arg = 0;
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        test_probs.at(i, c) = probs.at(r, c);
        if (probs.at(r, c) > probs.at(r, arg)) arg = static_cast<int>(c);
      }
      pred.push_back(arg);
      for (std::size_t c = 0; c < emb.cols(); ++c) test_emb.at(i, c) = emb.at(r, c);
    }
    run.row.micro_f1 = micro_f1(pred, truth, g.num_classes());
    run.row.macro_f1 = macro_f1(pred, truth, g.num_classes());
    run.row.auc = auc_ovr(test_probs, truth);
    ClusterAssignment cl =
        kmeans(test_emb, g.num_classes(), Rng::mix(seed, 0x7aaULL));
    run.row.nmi = nmi(cl.cluster, truth);
    run.row.ari = ari(cl.cluster, truth);
  } else {
    auto positives = target_pairs(g);
    if (positives.empty()) {
      throw ConfigError("protocol: link task needs target-target edges");
    }
    std::vector<int> idx(positives.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    SplitAssignment sp = make_split(idx, cfg.ratios, seed);
    for (int i : sp.train) run.split.train_pairs.push_back(positives[i]);
    for (int i : sp.val) run.split.val_pairs.push_back(positives[i]);
    for (int i : sp.test) run.split.test_pairs.push_back(positives[i]);

    // Walk on the training graph only: held-out positives removed first.
    std::vector<std::pair<int, int>> held_out = run.split.val_pairs;
    held_out.insert(held_out.end(), run.split.test_pairs.begin(),
                    run.split.test_pairs.end());
    HeteroGraph train_graph = remove_edges(g, held_out);
    run.subgraph = build_subgraph(train_graph, wcfg);
    run.result = train_model(train_graph, run.subgraph, cfg, hp, run.split, seed);

    const SubgraphPlan plan = make_plan(train_graph, run.subgraph);
    Tape tape;
    ParamLeaves lv = stage_params(tape, run.result.params, false);
    ForwardResult fw = model_forward(tape, lv, run.result.params, plan, hp,
                                     Mode::Eval, nullptr);
    const Tensor& emb = tape.value(fw.node_embeddings);

    Rng neg_rng(Rng::mix(seed, 0x7e57ULL));
    auto negatives = sample_negatives(g, run.split.test_pairs, neg_rng,
                                      cfg.neg_per_pos);
    std::vector<double> scores;
    std::vector<int> labels, pred;
    auto score_pair = [&](const std::pair<int, int>& pr) {
      const int ra = plan.row_of(pr.first);
      const int rb = plan.row_of(pr.second);
      double dot = 0.0;
      for (std::size_t c = 0; c < emb.cols(); ++c) {
        dot += emb.at(ra, c) * emb.at(rb, c);
      }
      return 1.0 / (1.0 + std::exp(-dot));
    };
    for (const auto& pr : run.split.test_pairs) {
      scores.push_back(score_pair(pr));
      labels.push_back(1);
    }
    for (const auto& pr : negatives) {
      scores.push_back(score_pair(pr));
      labels.push_back(0);
    }
    for (double s : scores) pred.push_back(s >= 0.5 ? 1 : 0);
    run.row.auc = auc(scores, labels);
    run.row.micro_f1 = micro_f1(pred, labels, 2);
    run.row.macro_f1 = macro_f1(pred, labels, 2);
    // Clustering metrics are not defined for the link task.
    run.row.nmi = std::numeric_limits<double>::quiet_NaN();
    run.row.ari = std::numeric_limits<double>::quiet_NaN();
  }

  const auto t1 = std::chrono::steady_clock::now();
  run.row.best_epoch = run.result.trace.best_epoch;
  run.row.epochs = static_cast<int>(run.result.trace.epochs.size());
  run.row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return run;
}

MetricsReport run_protocol(const HeteroGraph& g, const TrainConfig& cfg,
                           const HyperParams& hp, const WalkConfig& walk) {
  MetricsReport report;
  for (std::uint64_t seed : cfg.seeds) {
    report.rows.push_back(run_protocol_seed(g, cfg, hp, walk, seed).row);
  }
  return report;
}

}  // namespace facetpath
