#include "facetpath/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "facetpath/errors.hpp"
#include "facetpath/rng.hpp"

namespace facetpath {

namespace {

int label_universe(const std::vector<int>& pred, const std::vector<int>& truth,
                   int num_classes) {
  if (num_classes > 0) return num_classes;
  int mx = -1;
  for (int v : pred) mx = std::max(mx, v);
  for (int v : truth) mx = std::max(mx, v);
  return mx + 1;
}

}  // namespace

ConfusionTable confusion(const std::vector<int>& pred,
                         const std::vector<int>& truth, int num_classes) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw MetricError("confusion: inputs must be nonempty and equal length");
  }
  ConfusionTable t;
  t.num_classes = label_universe(pred, truth, num_classes);
  t.counts.assign(static_cast<std::size_t>(t.num_classes) * t.num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= t.num_classes || truth[i] < 0 ||
        truth[i] >= t.num_classes) {
      throw MetricError("confusion: class id outside the label universe");
    }
    ++t.at(truth[i], pred[i]);
  }
  return t;
}

double micro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                int num_classes) {
  const ConfusionTable t = confusion(pred, truth, num_classes);
  // Pooled over classes every off-diagonal entry is one FP and one FN.
  std::int64_t tp = 0, off = 0;
  for (int c = 0; c < t.num_classes; ++c) {
    for (int p = 0; p < t.num_classes; ++p) {
      (c == p ? tp : off) += t.at(c, p);
    }
  }
  const double denom = static_cast<double>(tp) + static_cast<double>(off);
  return denom == 0.0 ? 0.0 : static_cast<double>(tp) / denom;
}

double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                int num_classes) {
  const ConfusionTable t = confusion(pred, truth, num_classes);
  double sum = 0.0;
  for (int c = 0; c < t.num_classes; ++c) {
    std::int64_t tp = t.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < t.num_classes; ++o) {
      if (o == c) continue;
      fp += t.at(o, c);
      fn += t.at(c, o);
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
  }
  return sum / static_cast<double>(t.num_classes);
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw MetricError("auc: inputs must be nonempty and equal length");
  }
  std::int64_t npos = 0, nneg = 0;
  for (int l : labels) (l != 0 ? npos : nneg)++;
  if (npos == 0 || nneg == 0) {
    throw MetricError("auc: both classes must be present");
  }
  // Rank-sum with average ranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) *
                                      static_cast<double>(npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

double auc_ovr(const Tensor& probabilities, const std::vector<int>& labels,
               int* skipped_out) {
  if (probabilities.rows() != labels.size() || labels.empty()) {
    throw MetricError("auc_ovr: shape mismatch");
  }
  const int c = static_cast<int>(probabilities.cols());
  double sum = 0.0;
  int used = 0, skipped = 0;
  for (int cls = 0; cls < c; ++cls) {
    std::vector<double> scores(labels.size());
    std::vector<int> bin(labels.size());
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities.at(i, cls);
      bin[i] = labels[i] == cls ? 1 : 0;
      (bin[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
      ++skipped;
      continue;
    }
    sum += auc(scores, bin);
    ++used;
  }
  if (skipped_out != nullptr) *skipped_out = skipped;
  if (used == 0) throw MetricError("auc_ovr: no class with both outcomes");
  return sum / static_cast<double>(used);
}

namespace {

double sqdist(const Tensor& x, std::size_t row, const std::vector<double>& center,
              std::size_t d) {
  double acc = 0.0;
  const double* r = x.data() + row * d;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = r[j] - center[j];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

ClusterAssignment kmeans(const Tensor& x, int k, std::uint64_t seed,
                         int max_iter, double tol) {
  const std::size_t n = x.rows(), d = x.cols();
  if (k < 1 || n < static_cast<std::size_t>(k)) {
    throw MetricError("kmeans: need n >= k >= 1");
  }
  Rng rng(Rng::mix(seed, 0x4aeaa5ULL));

  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.reserve(k);
  {
    const std::size_t first = rng.uniform_index(n);
    centers.emplace_back(x.data() + first * d, x.data() + (first + 1) * d);
    std::vector<double> dist(n);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& ctr : centers) best = std::min(best, sqdist(x, i, ctr, d));
        dist[i] = best;
        total += best;
      }
      std::size_t pick;
      if (total <= 0.0) {
        pick = rng.uniform_index(n);
      } else {
        double r = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          r -= dist[i];
          if (r <= 0.0) {
            pick = i;
            break;
          }
        }
      }
      centers.emplace_back(x.data() + pick * d, x.data() + (pick + 1) * d);
    }
  }

  ClusterAssignment out;
  out.k = k;
  out.cluster.assign(n, 0);
  std::vector<std::vector<double>> next(k, std::vector<double>(d));
  std::vector<std::int64_t> count(k);

  for (int iter = 0; iter < max_iter; ++iter) {
    double inertia = 0.0;
    for (auto& c : next) std::fill(c.begin(), c.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double dd = sqdist(x, i, centers[c], d);
        if (dd < best) {
          best = dd;
          arg = c;
        }
      }
      out.cluster[i] = arg;
      inertia += best;
      ++count[arg];
      const double* r = x.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) next[arg][j] += r[j];
    }
    out.inertia = inertia;
    out.inertia_trace.push_back(inertia);

    for (int c = 0; c < k; ++c) {
      if (count[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its center.
        std::size_t far = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dd = sqdist(x, i, centers[out.cluster[i]], d);
          if (dd > best) {
            best = dd;
            far = i;
          }
        }
        next[c].assign(x.data() + far * d, x.data() + (far + 1) * d);
        count[c] = 1;
      } else {
        for (std::size_t j = 0; j < d; ++j) {
          next[c][j] /= static_cast<double>(count[c]);
        }
      }
    }

    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = next[c][j] - centers[c][j];
        acc += diff * diff;
      }
      shift = std::max(shift, std::sqrt(acc));
    }
    centers = next;
    if (shift < tol) break;
  }

  // Final assignment against the converged centers.
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int c = 0; c < k; ++c) {
      const double dd = sqdist(x, i, centers[c], d);
      if (dd < best) {
        best = dd;
        arg = c;
      }
    }
    out.cluster[i] = arg;
    inertia += best;
  }
  out.inertia = inertia;
  return out;
}

namespace {

struct Contingency {
  std::map<int, std::int64_t> rows, cols;
  std::map<std::pair<int, int>, std::int64_t> cells;
  std::int64_t n = 0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || a.size() != b.size()) {
    throw MetricError("clustering metric: inputs must be nonempty and equal length");
  }
  Contingency c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++c.rows[a[i]];
    ++c.cols[b[i]];
    ++c.cells[{a[i], b[i]}];
  }
  c.n = static_cast<std::int64_t>(a.size());
  return c;
}

double choose2(std::int64_t m) { return 0.5 * static_cast<double>(m) * static_cast<double>(m - 1); }

}  // namespace

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  const Contingency c = contingency(a, b);
  const double n = static_cast<double>(c.n);
  double ha = 0.0, hb = 0.0;
  for (const auto& [k, v] : c.rows) {
    const double p = static_cast<double>(v) / n;
    ha -= p * std::log(p);
  }
  for (const auto& [k, v] : c.cols) {
    const double p = static_cast<double>(v) / n;
    hb -= p * std::log(p);
  }
  if (ha <= 0.0 || hb <= 0.0) {
    // Zero entropy: identical single-cluster partitions score 1, else 0.
    return (ha <= 0.0 && hb <= 0.0) ? 1.0 : 0.0;
  }
  double mi = 0.0;
  for (const auto& [cell, cnt] : c.cells) {
    const double pij = static_cast<double>(cnt) / n;
    const double pi = static_cast<double>(c.rows.at(cell.first)) / n;
    const double pj = static_cast<double>(c.cols.at(cell.second)) / n;
    mi += pij * std::log(pij / (pi * pj));
  }
  const double v = mi / std::sqrt(ha * hb);
  return std::clamp(v, 0.0, 1.0);
}

double ari(const std::vector<int>& a, const std::vector<int>& b) {
  const Contingency c = contingency(a, b);
  double index = 0.0;
  for (const auto& [cell, cnt] : c.cells) index += choose2(cnt);
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& [k, v] : c.rows) sum_a += choose2(v);
  for (const auto& [k, v] : c.cols) sum_b += choose2(v);
  const double total = choose2(c.n);
  if (total == 0.0) return 1.0;  // single item
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  const double denom = max_index - expected;
  if (denom == 0.0) {
    // Degenerate (both single-cluster or both all-singletons): identical
    // partitions score 1 by convention.
    return index == expected ? 1.0 : 0.0;
  }
  return (index - expected) / denom;
}

}  // namespace facetpath
