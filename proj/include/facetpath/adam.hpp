#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "facetpath/tensor.hpp"

namespace facetpath {

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with L2 weight decay folded into the gradient (grad += wd * param)
// before the moment updates. Moments are keyed by parameter name so the same
// optimizer instance can follow a parameter set across steps.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  // Call once per optimization step before the per-parameter updates.
  void begin_step() { ++step_; }

  void update(const std::string& name, Tensor& param, const Tensor& grad);

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace facetpath
