#include "facetpath/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "facetpath/adam.hpp"
#include "facetpath/errors.hpp"

namespace facetpath {

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "edge_weight") return AblationAxis::EdgeWeight;
  if (s == "facets") return AblationAxis::FacetCount;
  if (s == "tau") return AblationAxis::Temperature;
  if (s == "train_ratio") return AblationAxis::TrainRatio;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::EdgeWeight: return "edge_weight";
    case AblationAxis::FacetCount: return "facets";
    case AblationAxis::Temperature: return "tau";
    case AblationAxis::TrainRatio: return "train_ratio";
  }
  return "?";
}

void AblationSpec::validate() const {
  if (values.empty()) throw ConfigError("ablation: values must be nonempty");
  config.validate();
  hyper.validate();
  walk.validate();
  for (const std::string& v : values) {
    switch (axis) {
      case AblationAxis::EdgeWeight:
        edge_weight_mode_from_string(v);
        break;
      case AblationAxis::FacetCount:
        if (std::stoi(v) < 1) throw ConfigError("ablation: facets must be >= 1");
        break;
      case AblationAxis::Temperature:
        if (std::stod(v) <= 0.0) throw ConfigError("ablation: tau must be > 0");
        break;
      case AblationAxis::TrainRatio: {
        const double r = std::stod(v);
        if (r <= 0.0 || r >= 1.0) throw ConfigError("ablation: ratio must be in (0,1)");
        break;
      }
    }
  }
}

MetricsReport run_ablation(const HeteroGraph& g, const AblationSpec& spec) {
  spec.validate();
  MetricsReport report;
  for (const std::string& value : spec.values) {
    TrainConfig cfg = spec.config;
    HyperParams hp = spec.hyper;
    switch (spec.axis) {
      case AblationAxis::EdgeWeight:
        hp.edge_weight_mode = edge_weight_mode_from_string(value);
        break;
      case AblationAxis::FacetCount:
        hp.facets = std::stoi(value);
        break;
      case AblationAxis::Temperature:
        hp.tau = std::stod(value);
        break;
      case AblationAxis::TrainRatio: {
        const double r = std::stod(value);
        cfg.ratios.train = r;
        cfg.ratios.val = (1.0 - r) / 2.0;
        cfg.ratios.test = (1.0 - r) / 2.0;
        break;
      }
    }
    for (std::uint64_t seed : cfg.seeds) {
      ProtocolRun run = run_protocol_seed(g, cfg, hp, spec.walk, seed);
      run.row.axis = value;
      report.rows.push_back(run.row);
    }
  }
  return report;
}

namespace {

// Mean per-epoch forward+backward wall time, best effort against timer noise.
double measure_epoch_ms(const HeteroGraph& g, const SubgraphPlan& plan,
                        const HyperParams& hp, int epochs, int reps) {
  ModelParams params = init_params(g, hp, std::max(g.num_classes(), 2), 42);
  Rng rng(42);
  AdamState adam;
  // Two untimed warm passes populate caches and bn running stats.
  for (int w = 0; w < 2; ++w) {
    Tape tape;
    ParamLeaves lv = stage_params(tape, params, true);
    ForwardResult fw = model_forward(tape, lv, params, plan, hp, Mode::Train, &rng);
    VarId loss = tape.sum_all(fw.node_embeddings);
    tape.backward(loss);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (int e = 0; e < epochs * reps; ++e) {
    Tape tape;
    ParamLeaves lv = stage_params(tape, params, true);
    ForwardResult fw = model_forward(tape, lv, params, plan, hp, Mode::Train, &rng);
    VarId loss = tape.sum_all(fw.node_embeddings);
    tape.backward(loss);
  }
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() /
         static_cast<double>(epochs * reps);
}

}  // namespace

TimingReport time_scaling(const HeteroGraph& g, const std::vector<int>& k_values,
                          const HyperParams& base, const WalkConfig& walk,
                          int epochs, double min_epoch_ms) {
  if (k_values.size() < 3) {
    throw ConfigError("time_scaling: need at least 3 facet counts");
  }
  const FacetSubgraph sub = build_subgraph(g, walk);
  const SubgraphPlan plan = make_plan(g, sub);

  TimingReport rep;
  for (int k : k_values) {
    HyperParams hp = base;
    hp.facets = k;
    int reps = 1;
    double ms = measure_epoch_ms(g, plan, hp, epochs, reps);
    // Degenerate sub-millisecond epochs: widen the measurement window.
    while (ms < min_epoch_ms && reps < 64) {
      reps *= 2;
      ms = measure_epoch_ms(g, plan, hp, epochs, reps);
    }
    rep.k_values.push_back(k);
    rep.mean_epoch_ms.push_back(ms);
    rep.repetitions.push_back(reps);
  }

  // Least-squares line t = a + b*k.
  const std::size_t n = rep.k_values.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rep.k_values[i];
    const double y = rep.mean_epoch_ms[i];
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  rep.slope = (static_cast<double>(n) * sxy - sx * sy) / denom;
  rep.intercept = (sy - rep.slope * sx) / static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  const double ymean = sy / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double fit = rep.intercept + rep.slope * rep.k_values[i];
    ss_res += (rep.mean_epoch_ms[i] - fit) * (rep.mean_epoch_ms[i] - fit);
    ss_tot += (rep.mean_epoch_ms[i] - ymean) * (rep.mean_epoch_ms[i] - ymean);
  }
  rep.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return rep;
}

std::string TimingReport::to_csv() const {
  std::ostringstream os;
  os << "k,mean_epoch_ms,repetitions\n";
  os.precision(6);
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    os << k_values[i] << ',' << mean_epoch_ms[i] << ',' << repetitions[i] << '\n';
  }
  os << "# slope_ms_per_k=" << slope << " intercept_ms=" << intercept
     << " r_squared=" << r_squared << '\n';
  return os.str();
}

}  // namespace facetpath
