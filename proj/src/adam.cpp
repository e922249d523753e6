#include "facetpath/adam.hpp"

#include <cmath>

#include "facetpath/errors.hpp"

namespace facetpath {

void AdamState::update(const std::string& name, Tensor& param, const Tensor& grad) {
  if (!param.same_shape(grad)) {
    throw ShapeError("adam: grad shape " + grad.shape_str() + " != param " +
                     param.shape_str() + " for " + name);
  }
  auto it = moments_.find(name);
  if (it == moments_.end()) {
    it = moments_
             .emplace(name, Moments{Tensor(param.rows(), param.cols(), 0.0),
                                    Tensor(param.rows(), param.cols(), 0.0)})
             .first;
  }
  Moments& mom = it->second;
  if (!mom.m.same_shape(param)) {
    throw ShapeError("adam: moment shape drift for " + name);
  }
  if (step_ == 0) {
    throw ContractError("adam: begin_step() must be called before update()");
  }

  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + cfg_.weight_decay * param[i];
    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
    const double mhat = mom.m[i] / bc1;
    const double vhat = mom.v[i] / bc2;
    param[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace facetpath
