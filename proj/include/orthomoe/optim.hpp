// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "orthomoe/matrix.hpp"

namespace orthomoe {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// First/second moment buffers for one parameter tensor.
struct AdamWSlot {
  Matrix m;
  Matrix v;
};

// Standard AdamW: bias-corrected moments, decoupled decay. step is 1-based.
void adamw_step(Matrix& param, const Matrix& grad, AdamWSlot& slot, std::size_t step,
                const AdamWConfig& cfg);

}  // namespace orthomoe
