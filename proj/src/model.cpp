#include "facetpath/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "facetpath/adam.hpp"
#include "facetpath/errors.hpp"

namespace facetpath {

std::string to_string(EdgeWeightMode m) {
  switch (m) {
    case EdgeWeightMode::Gumbel: return "gumbel";
    case EdgeWeightMode::Random: return "random";
    case EdgeWeightMode::None: return "none";
  }
  return "?";
}

EdgeWeightMode edge_weight_mode_from_string(const std::string& s) {
  if (s == "gumbel") return EdgeWeightMode::Gumbel;
  if (s == "random") return EdgeWeightMode::Random;
  if (s == "none") return EdgeWeightMode::None;
  throw ConfigError("unknown edge weight mode '" + s + "'");
}

void HyperParams::validate() const {
  if (facets < 1) throw ConfigError("hyper: facets must be >= 1");
  if (tau <= 0.0) throw ConfigError("hyper: tau must be > 0");
  if (layers < 1) throw ConfigError("hyper: layers must be >= 1");
  if (dim < 1) throw ConfigError("hyper: dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("hyper: dropout must be in [0,1)");
}

namespace {

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

ModelParams init_params(const HeteroGraph& g, const HyperParams& hp,
                        int num_classes, std::uint64_t seed) {
  const std::size_t d = static_cast<std::size_t>(hp.dim);
  Rng rng(Rng::mix(seed, 0xa11cafeULL));
  ModelParams p;

  // Per-type projectors first (deterministic draw order: ascending type id).
  for (const auto& [t, feat] : g.features_by_type()) {
    Tensor proj(feat.cols(), d);
    fill_uniform(proj, glorot_bound(feat.cols(), d), rng);
    p.feature_proj.emplace(t, std::move(proj));
  }

  p.embeddings = Tensor(g.num_nodes(), d);
  const double ebound = glorot_bound(d, d);
  for (int v = 0; v < g.num_nodes(); ++v) {
    const Tensor* feat = g.features_of_type(g.node_type(v));
    if (feat != nullptr) {
      const Tensor& proj = p.feature_proj.at(g.node_type(v));
      const int r = g.index_within_type(v);
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < feat->cols(); ++c) {
          acc += feat->at(r, c) * proj.at(c, j);
        }
        p.embeddings.at(v, j) = acc;
      }
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        p.embeddings.at(v, j) = (2.0 * rng.uniform() - 1.0) * ebound;
      }
    }
  }

  p.facet_proj.resize(hp.facets);
  for (Tensor& w : p.facet_proj) {
    w = Tensor(d, d);
    fill_uniform(w, glorot_bound(d, d), rng);
  }
  p.facet_scorer = Tensor(1, d);
  fill_uniform(p.facet_scorer, glorot_bound(1, d), rng);

  p.bn_gamma.assign(hp.layers, Tensor(1, d, 1.0));
  p.bn_beta.assign(hp.layers, Tensor(1, d, 0.0));
  p.bn_state.assign(hp.layers, BatchNormState(d));

  if (num_classes > 0) {
    p.classifier_w = Tensor(num_classes, d);
    fill_uniform(p.classifier_w, glorot_bound(num_classes, d), rng);
    p.classifier_b = Tensor(1, num_classes, 0.0);
  }
  return p;
}

SubgraphPlan make_plan(const HeteroGraph& g, const FacetSubgraph& sub) {
  SubgraphPlan plan;
  plan.target_ids = sub.target_ids;
  plan.incident = sub.incident;
  plan.num_edges = static_cast<int>(sub.edges.size());

  plan.row_of_node.assign(g.num_nodes(), -1);
  for (std::size_t i = 0; i < sub.target_ids.size(); ++i) {
    plan.row_of_node[sub.target_ids[i]] = static_cast<int>(i);
  }

  std::vector<int> uniq;
  for (const SubgraphEdge& e : sub.edges) {
    uniq.insert(uniq.end(), e.intermediates.begin(), e.intermediates.end());
  }
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  plan.uniq_intermediates = uniq;
  std::vector<int> pos_of(g.num_nodes(), -1);
  for (std::size_t i = 0; i < uniq.size(); ++i) pos_of[uniq[i]] = static_cast<int>(i);

  plan.inv_inter_count = Tensor(plan.num_edges, 1, 0.0);
  for (int e = 0; e < plan.num_edges; ++e) {
    const auto& inter = sub.edges[e].intermediates;
    if (inter.empty()) {
      throw ContractError("subgraph edge without intermediates");
    }
    for (int s : inter) {
      plan.flat_inter.push_back(pos_of[s]);
      plan.flat_edge.push_back(e);
    }
    plan.inv_inter_count[e] = 1.0 / static_cast<double>(inter.size());
  }

  for (int e = 0; e < plan.num_edges; ++e) {
    const int ra = plan.row_of_node[sub.edges[e].a];
    const int rb = plan.row_of_node[sub.edges[e].b];
    plan.arc_dst_row.push_back(ra);
    plan.arc_src_row.push_back(rb);
    plan.arc_edge.push_back(e);
    plan.arc_dst_row.push_back(rb);
    plan.arc_src_row.push_back(ra);
    plan.arc_edge.push_back(e);
  }
  return plan;
}

ParamLeaves stage_params(Tape& tape, const ModelParams& p, bool requires_grad) {
  ParamLeaves lv;
  lv.embeddings = tape.leaf(p.embeddings, requires_grad);
  for (const Tensor& w : p.facet_proj) {
    lv.facet_proj.push_back(tape.leaf(w, requires_grad));
  }
  lv.facet_scorer = tape.leaf(p.facet_scorer, requires_grad);
  for (std::size_t l = 0; l < p.bn_gamma.size(); ++l) {
    lv.bn_gamma.push_back(tape.leaf(p.bn_gamma[l], requires_grad));
    lv.bn_beta.push_back(tape.leaf(p.bn_beta[l], requires_grad));
  }
  if (!p.classifier_w.empty()) {
    lv.classifier_w = tape.leaf(p.classifier_w, requires_grad);
    lv.classifier_b = tape.leaf(p.classifier_b, requires_grad);
  }
  return lv;
}

EdgeFeatureVars compute_edge_features(Tape& t, const ParamLeaves& lv,
                                      const SubgraphPlan& plan,
                                      const HyperParams& hp, Mode mode,
                                      Rng* rng) {
  const int num_edges = plan.num_edges;
  if (num_edges == 0) throw TrainError("edge features: empty subgraph");
  if (hp.facets < 1) throw ConfigError("edge features: facets must be >= 1");
  const int K = hp.facets;
  const std::size_t d = static_cast<std::size_t>(hp.dim);

  EdgeFeatureVars out;
  if (hp.edge_weight_mode == EdgeWeightMode::None) {
    out.combined = t.constant(Tensor(num_edges, d, 1.0));
    return out;
  }

  VarId e_inter = t.gather_rows(lv.embeddings, plan.uniq_intermediates);
  VarId invc = t.constant(plan.inv_inter_count);
  out.per_facet.resize(K);
  for (int n = 0; n < K; ++n) {
    VarId f = t.matmul(e_inter, lv.facet_proj[n]);
    VarId gathered = t.gather_rows(f, plan.flat_inter);
    VarId sums = t.scatter_add_rows(gathered, plan.flat_edge, num_edges);
    out.per_facet[n] = t.rowwise_scale(sums, invc);
  }
  if (hp.edge_weight_mode == EdgeWeightMode::Gumbel) {
    VarId scorer_col = t.transpose(lv.facet_scorer);
    std::vector<VarId> logit_cols(K);
    for (int n = 0; n < K; ++n) {
      logit_cols[n] = t.matmul(out.per_facet[n], scorer_col);
    }
    VarId logits = t.concat_cols(logit_cols);
    const bool noise = mode == Mode::Train && hp.gumbel_noise;
    if (noise && rng == nullptr) {
      throw ContractError("edge features: train mode needs an rng");
    }
    out.alpha = t.gumbel_softmax(logits, hp.tau, rng, noise, hp.hard_select);
  } else {
    // Random selection: fresh one-hot draws in train mode; a fixed per-edge
    // hash in eval mode so evaluation stays deterministic.
    Tensor a(num_edges, K, 0.0);
    for (int e = 0; e < num_edges; ++e) {
      std::size_t pick;
      if (mode == Mode::Train) {
        if (rng == nullptr) throw ContractError("edge features: train mode needs an rng");
        pick = rng->uniform_index(K);
      } else {
        pick = Rng::mix(0xface7edULL, static_cast<std::uint64_t>(e)) % K;
      }
      a.at(e, pick) = 1.0;
    }
    out.alpha = t.constant(std::move(a));
  }
  for (int n = 0; n < K; ++n) {
    VarId scaled = t.rowwise_scale(out.per_facet[n], t.slice_cols(out.alpha, n, n + 1));
    out.combined = (n == 0) ? scaled : t.add(out.combined, scaled);
  }
  return out;
}

ForwardResult model_forward(Tape& t, const ParamLeaves& lv, ModelParams& params,
                            const SubgraphPlan& plan, const HyperParams& hp,
                            Mode mode, Rng* rng) {
  if (static_cast<int>(params.bn_gamma.size()) < hp.layers) {
    throw ShapeError("forward: params carry fewer bn layers than requested");
  }

  VarId h = t.gather_rows(lv.embeddings, plan.target_ids);
  EdgeFeatureVars ef = compute_edge_features(t, lv, plan, hp, mode, rng);
  const VarId edge_feat = ef.combined;
  const VarId alpha = ef.alpha;

  for (int l = 0; l < hp.layers; ++l) {
    VarId hsrc = t.gather_rows(h, plan.arc_src_row);
    VarId pe = t.gather_rows(edge_feat, plan.arc_edge);
    VarId contrib = t.hadamard(pe, hsrc);
    VarId msg = t.scatter_add_rows(contrib, plan.arc_dst_row, plan.target_ids.size());
    VarId bn = t.batch_norm(msg, lv.bn_gamma[l], lv.bn_beta[l],
                            params.bn_state[l], mode);
    VarId act = t.elu(bn);
    h = t.dropout(act, hp.dropout, mode, rng);
  }

  ForwardResult res;
  res.node_embeddings = h;
  res.facet_weights = alpha;
  if (lv.classifier_w >= 0) {
    VarId logits = t.add_row_broadcast(
        t.matmul(h, t.transpose(lv.classifier_w)), lv.classifier_b);
    res.class_probs = t.softmax(logits, 1);
  }
  return res;
}

namespace {

// Index arrays for one h(v) = mean over neighbors pass; isolated nodes keep
// their own embedding.
struct AggPlan {
  std::vector<int> flat_nbr;
  std::vector<int> owner;
  Tensor inv_deg;    // n x 1, 0 for isolated
  Tensor iso_mask;   // n x 1, 1 for isolated
};

AggPlan make_agg_plan(const HeteroGraph& g) {
  AggPlan p;
  const int n = g.num_nodes();
  p.inv_deg = Tensor(n, 1, 0.0);
  p.iso_mask = Tensor(n, 1, 0.0);
  for (int v = 0; v < n; ++v) {
    const auto nb = g.neighbors(v);
    if (nb.empty()) {
      p.iso_mask[v] = 1.0;
      continue;
    }
    p.inv_deg[v] = 1.0 / static_cast<double>(nb.size());
    for (int u : nb) {
      p.flat_nbr.push_back(u);
      p.owner.push_back(v);
    }
  }
  return p;
}

VarId mean_aggregate(Tape& t, VarId emb, const AggPlan& plan, int n) {
  VarId gathered = t.gather_rows(emb, plan.flat_nbr);
  VarId sums = t.scatter_add_rows(gathered, plan.owner, n);
  VarId means = t.rowwise_scale(sums, t.constant(plan.inv_deg));
  VarId self = t.rowwise_scale(emb, t.constant(plan.iso_mask));
  return t.add(means, self);
}

}  // namespace

std::vector<double> warm_up(const HeteroGraph& g, ModelParams& params,
                            const WarmUpOptions& opts, std::uint64_t seed) {
  const auto edges = g.undirected_edges();
  if (edges.empty()) throw TrainError("warm_up: graph has no edges");
  if (opts.max_epochs <= 0) return {};

  const int n = g.num_nodes();
  const AggPlan agg = make_agg_plan(g);
  std::vector<int> src, dst;
  src.reserve(edges.size());
  dst.reserve(edges.size());
  for (const auto& [u, v] : edges) {
    src.push_back(u);
    dst.push_back(v);
  }

  AdamState adam(AdamConfig{opts.lr, opts.weight_decay, 0.9, 0.999, 1e-8});
  Rng neg_rng(Rng::mix(seed, 0x4a12fULL));

  std::vector<double> trace;
  double best = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    Tape tape;
    VarId emb = tape.leaf(params.embeddings, true);
    VarId h = mean_aggregate(tape, emb, agg, n);
    VarId hu = tape.gather_rows(h, src);
    VarId hv = tape.gather_rows(h, dst);
    VarId pos_scores = tape.row_sum(tape.hadamard(hu, hv));
    VarId loss = tape.scale(tape.sum_all(tape.log_sigmoid(pos_scores)), -1.0);
    if (opts.negatives) {
      std::vector<int> neg(edges.size());
      for (std::size_t i = 0; i < neg.size(); ++i) {
        neg[i] = static_cast<int>(neg_rng.uniform_index(n));
      }
      VarId hn = tape.gather_rows(h, neg);
      VarId neg_scores = tape.scale(tape.row_sum(tape.hadamard(hu, hn)), -1.0);
      VarId neg_loss = tape.scale(tape.sum_all(tape.log_sigmoid(neg_scores)), -1.0);
      loss = tape.add(loss, neg_loss);
    }

    const double loss_val = tape.value(loss)[0];
    if (!std::isfinite(loss_val)) {
      throw TrainError("warm_up: non-finite loss at epoch " + std::to_string(epoch));
    }
    trace.push_back(loss_val);
    if (loss_val < best - opts.min_improvement) {
      best = loss_val;
      stall = 0;
    } else if (++stall >= opts.patience) {
      break;
    }

    tape.backward(loss);
    adam.begin_step();
    adam.update("E", params.embeddings, tape.grad(emb));
  }

  // E <- h: replace the base embeddings with the aggregated representation.
  Tape tape;
  VarId emb = tape.leaf(params.embeddings, false);
  VarId h = mean_aggregate(tape, emb, agg, n);
  params.embeddings = tape.value(h);
  return trace;
}

AttentionExport export_attention(const HeteroGraph& g, const SubgraphPlan& plan,
                                 const ModelParams& params, const HyperParams& hp) {
  const int K = hp.facets;
  const int n = static_cast<int>(plan.target_ids.size());

  Tensor alpha_rows;
  if (hp.edge_weight_mode != EdgeWeightMode::None && plan.num_edges > 0) {
    Tape tape;
    ParamLeaves lv = stage_params(tape, params, false);
    EdgeFeatureVars ef = compute_edge_features(tape, lv, plan, hp, Mode::Eval, nullptr);
    if (ef.alpha >= 0) alpha_rows = tape.value(ef.alpha);
  }

  AttentionExport out;
  out.node_ids = plan.target_ids;
  out.rows = Tensor(n, K, 0.0);
  out.isolated.assign(n, 0);
  const double unif = 1.0 / static_cast<double>(K);
  for (int i = 0; i < n; ++i) {
    const auto& inc = plan.incident[i];
    if (inc.empty() || alpha_rows.empty()) {
      for (int k = 0; k < K; ++k) out.rows.at(i, k) = unif;
      out.isolated[i] = inc.empty() ? 1 : 0;
      continue;
    }
    for (int e : inc) {
      for (int k = 0; k < K; ++k) out.rows.at(i, k) += alpha_rows.at(e, k);
    }
    const double inv = 1.0 / static_cast<double>(inc.size());
    for (int k = 0; k < K; ++k) out.rows.at(i, k) *= inv;
  }
  (void)g;
  return out;
}

void write_attention_csv(const AttentionExport& att, const HeteroGraph& g,
                         const std::string& file) {
  std::ofstream out(file);
  if (!out) throw IngestError("cannot open " + file + " for writing");
  out << "node_id,type";
  for (std::size_t k = 0; k < att.rows.cols(); ++k) out << ",alpha_" << k + 1;
  out << '\n';
  out.precision(10);
  for (std::size_t i = 0; i < att.node_ids.size(); ++i) {
    out << att.node_ids[i] << ',' << g.type_names()[g.node_type(att.node_ids[i])];
    for (std::size_t k = 0; k < att.rows.cols(); ++k) {
      out << ',' << att.rows.at(i, k);
    }
    out << '\n';
  }
}

namespace {

void put_u32(std::ostream& o, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  o.write(b, 4);
}

void put_u64(std::ostream& o, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  o.write(b, 8);
}

void put_f64(std::ostream& o, double v) {
  put_u64(o, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IngestError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IngestError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

void put_record(std::ostream& o, const std::string& name, const Tensor& t) {
  put_u32(o, static_cast<std::uint32_t>(name.size()));
  o.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(o, 2);
  put_u64(o, t.rows());
  put_u64(o, t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(o, t[i]);
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& params, const HyperParams& hp,
                     const std::string& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IngestError("cannot open " + file + " for writing");
  out.write("MF2V", 4);
  put_u32(out, kCheckpointVersion);

  put_record(out, "hyper", Tensor::from_rows({{static_cast<double>(hp.facets),
                                               hp.tau,
                                               static_cast<double>(hp.layers),
                                               static_cast<double>(hp.dim),
                                               hp.dropout,
                                               static_cast<double>(static_cast<int>(hp.edge_weight_mode)),
                                               hp.hard_select ? 1.0 : 0.0}}));
  put_record(out, "E", params.embeddings);
  for (std::size_t n = 0; n < params.facet_proj.size(); ++n) {
    put_record(out, "W_A." + std::to_string(n), params.facet_proj[n]);
  }
  put_record(out, "W_B", params.facet_scorer);
  for (std::size_t l = 0; l < params.bn_gamma.size(); ++l) {
    put_record(out, "bn.gamma." + std::to_string(l), params.bn_gamma[l]);
    put_record(out, "bn.beta." + std::to_string(l), params.bn_beta[l]);
    put_record(out, "bn.running_mean." + std::to_string(l), params.bn_state[l].running_mean);
    put_record(out, "bn.running_var." + std::to_string(l), params.bn_state[l].running_var);
  }
  if (!params.classifier_w.empty()) {
    put_record(out, "W_C", params.classifier_w);
    put_record(out, "b_C", params.classifier_b);
  }
  for (const auto& [t, proj] : params.feature_proj) {
    put_record(out, "feat_proj." + std::to_string(t), proj);
  }
}

ModelParams load_checkpoint(const std::string& file, HyperParams* hp_out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestError("cannot open " + file);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MF2V", 4) != 0) {
    throw IngestError("checkpoint: bad magic");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw IngestError("checkpoint: unsupported version " + std::to_string(version));
  }

  std::map<std::string, Tensor> records;
  while (true) {
    std::uint32_t name_len;
    {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      if (in.eof()) break;
      if (!in) throw IngestError("checkpoint: truncated record");
      name_len = 0;
      for (int i = 0; i < 4; ++i) name_len |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndims = get_u32(in);
    if (ndims != 2) throw IngestError("checkpoint: expected 2-d tensor");
    const std::uint64_t rows = get_u64(in);
    const std::uint64_t cols = get_u64(in);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(in);
    records.emplace(std::move(name), std::move(t));
  }

  auto take = [&](const std::string& name) {
    auto it = records.find(name);
    if (it == records.end()) throw IngestError("checkpoint: missing record " + name);
    Tensor t = std::move(it->second);
    records.erase(it);
    return t;
  };

  const Tensor hyper = take("hyper");
  HyperParams hp;
  hp.facets = static_cast<int>(hyper[0]);
  hp.tau = hyper[1];
  hp.layers = static_cast<int>(hyper[2]);
  hp.dim = static_cast<int>(hyper[3]);
  hp.dropout = hyper[4];
  hp.edge_weight_mode = static_cast<EdgeWeightMode>(static_cast<int>(hyper[5]));
  hp.hard_select = hyper[6] != 0.0;
  if (hp_out != nullptr) *hp_out = hp;

  ModelParams p;
  p.embeddings = take("E");
  p.facet_proj.resize(hp.facets);
  for (int n = 0; n < hp.facets; ++n) p.facet_proj[n] = take("W_A." + std::to_string(n));
  p.facet_scorer = take("W_B");
  p.bn_gamma.resize(hp.layers);
  p.bn_beta.resize(hp.layers);
  p.bn_state.assign(hp.layers, BatchNormState(hp.dim));
  for (int l = 0; l < hp.layers; ++l) {
    p.bn_gamma[l] = take("bn.gamma." + std::to_string(l));
    p.bn_beta[l] = take("bn.beta." + std::to_string(l));
    p.bn_state[l].running_mean = take("bn.running_mean." + std::to_string(l));
    p.bn_state[l].running_var = take("bn.running_var." + std::to_string(l));
  }
  if (records.count("W_C")) {
    p.classifier_w = take("W_C");
    p.classifier_b = take("b_C");
  }
  for (auto& [name, t] : records) {
    if (name.rfind("feat_proj.", 0) == 0) {
      p.feature_proj.emplace(std::stoi(name.substr(10)), std::move(t));
    }
  }
  return p;
}

}  // namespace facetpath
