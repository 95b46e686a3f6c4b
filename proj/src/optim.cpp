// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/optim.hpp"

#include <cmath>

namespace orthomoe {

void adamw_step(Matrix& param, const Matrix& grad, AdamWSlot& slot, std::size_t step,
                const AdamWConfig& cfg) {
  if (!param.same_shape(grad))
    throw Error(Error::Code::ShapeMismatch, "adamw_step: grad shape mismatch");
  if (slot.m.empty()) {
    slot.m = Matrix(param.rows, param.cols);
    slot.v = Matrix(param.rows, param.cols);
  }
  if (!slot.m.same_shape(param))
    throw Error(Error::Code::ShapeMismatch, "adamw_step: moment shape mismatch");
  if (step == 0) throw Error(Error::Code::InvalidConfig, "adamw_step: step is 1-based");

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double gi = grad.data[i];
    slot.m.data[i] = cfg.beta1 * slot.m.data[i] + (1.0 - cfg.beta1) * gi;
    slot.v.data[i] = cfg.beta2 * slot.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = slot.m.data[i] / bc1;
    const double vhat = slot.v.data[i] / bc2;
    param.data[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param.data[i]);
  }
}

}  // namespace orthomoe
