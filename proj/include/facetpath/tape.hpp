#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "facetpath/rng.hpp"
#include "facetpath/tensor.hpp"

namespace facetpath {

using VarId = int;

enum class Mode { Train, Eval };

// Running statistics for one batch-norm layer. Lives outside the tape; the
// affine parameters (gamma, beta) are ordinary leaves.
struct BatchNormState {
  Tensor running_mean;  // 1 x d
  Tensor running_var;   // 1 x d
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t d = 0)
      : running_mean(1, d, 0.0), running_var(1, d, 1.0) {}
};

// Reverse-mode tape. Ops append value nodes in topological order; backward()
// walks them once in reverse. A fresh tape is built per forward/backward pass.
class Tape {
 public:
  Tape();

  // Leaves. Constants never receive gradients.
  VarId leaf(Tensor value, bool requires_grad);
  VarId constant(Tensor value) { return leaf(std::move(value), false); }

  // Core kernels.
  VarId matmul(VarId a, VarId b);
  VarId add(VarId a, VarId b);
  VarId scale(VarId a, double s);
  VarId hadamard(VarId a, VarId b);
  VarId row_mean(VarId a);                     // n x d -> 1 x d
  VarId row_sum(VarId a);                      // n x d -> n x 1
  VarId sum_all(VarId a);                      // n x d -> 1 x 1
  VarId transpose(VarId a);
  VarId concat_rows(const std::vector<VarId>& parts);
  VarId concat_cols(const std::vector<VarId>& parts);
  VarId slice_cols(VarId a, std::size_t c0, std::size_t c1);
  VarId gather_rows(VarId a, std::vector<int> index);
  VarId scatter_add_rows(VarId a, std::vector<int> index, std::size_t out_rows);
  VarId rowwise_scale(VarId a, VarId w);       // a: n x d, w: n x 1
  VarId add_row_broadcast(VarId a, VarId b);   // a: n x d, b: 1 x d
  VarId take_per_row(VarId a, std::vector<int> col_index);  // -> n x 1

  // Elementwise nonlinearities.
  VarId elu(VarId a);
  VarId sigmoid(VarId a);
  VarId log_clamped(VarId a, double floor = 1e-12);  // counts clamp events
  VarId log_sigmoid(VarId a);

  // Row-wise (axis=1) or column-wise (axis=0) softmax.
  VarId softmax(VarId a, int axis = 1);

  // Row-wise Gumbel-Softmax. noise_on draws one Gumbel sample per entry from
  // rng; hard emits a one-hot argmax forward while keeping the soft backward.
  VarId gumbel_softmax(VarId logits, double tau, Rng* rng, bool noise_on,
                       bool hard);

  VarId batch_norm(VarId x, VarId gamma, VarId beta, BatchNormState& state,
                   Mode mode);

  // Inverted dropout. rate == 0 is an exact identity and consumes no rng.
  VarId dropout(VarId a, double rate, Mode mode, Rng* rng);

  void backward(VarId loss);

  const Tensor& value(VarId v) const { return values_[v]; }
  // Zero tensor until backward() has run and touched this var.
  const Tensor& grad(VarId v) const;
  bool requires_grad(VarId v) const { return requires_[v]; }
  std::size_t num_vars() const { return values_.size(); }
  // log_clamped activations that actually hit the floor (flagged, not fatal).
  std::int64_t clamp_events() const { return clamp_events_; }

 private:
  struct Node {
    std::function<void(Tape&)> backward;  // empty for leaves
  };

  VarId push(Tensor value, bool requires_grad, std::function<void(Tape&)> bw);
  Tensor& grad_buf(VarId v);
  void check_finite(const Tensor& t, const char* op) const;

  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<bool> requires_;
  std::vector<Node> nodes_;
  std::int64_t clamp_events_ = 0;
  bool finite_checks_ = false;
  Tensor zero_;
};

}  // namespace facetpath
