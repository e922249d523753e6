#pragma once

#include <cstdint>
#include <vector>

#include "facetpath/tensor.hpp"

namespace facetpath {

// C x C integer confusion counts; rows = true class, cols = predicted.
struct ConfusionTable {
  int num_classes = 0;
  std::vector<std::int64_t> counts;

  std::int64_t& at(int t, int p) { return counts[t * num_classes + p]; }
  std::int64_t at(int t, int p) const { return counts[t * num_classes + p]; }
};

ConfusionTable confusion(const std::vector<int>& pred,
                         const std::vector<int>& truth, int num_classes = 0);

// Pooled-count F1; equals accuracy for single-label tasks.
double micro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                int num_classes = 0);
// Unweighted mean of per-class F1 over the label universe
// (max(pred, truth)+1 classes when num_classes is 0).
double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth,
                int num_classes = 0);

// Mann-Whitney AUC with ties counted 1/2.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted mean of per-class one-vs-rest AUC; classes absent from `labels`
// are skipped (reported via skipped_out when given).
double auc_ovr(const Tensor& probabilities, const std::vector<int>& labels,
               int* skipped_out = nullptr);

struct ClusterAssignment {
  std::vector<int> cluster;
  int k = 0;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // one entry per Lloyd iteration
};

// k-means++ seeding plus Lloyd iterations; empty clusters are re-seeded to
// the farthest point.
ClusterAssignment kmeans(const Tensor& x, int k, std::uint64_t seed,
                         int max_iter = 300, double tol = 1e-6);

// Normalized mutual information (natural logs, geometric-mean normalization).
double nmi(const std::vector<int>& a, const std::vector<int>& b);
// Adjusted Rand index (pair-counting, expected-index normalization).
double ari(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace facetpath
