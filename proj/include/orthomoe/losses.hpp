// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "orthomoe/matrix.hpp"

namespace orthomoe {

struct BalanceConfig {
  double weight = 0.0;
  double warmup_ratio = 0.0;     // loss is hard-zero before ceil(ratio * total_steps)
  double per_bucket_coeff = 0.0;
  std::size_t bucket_count = 4;
  bool soft_counts = false;  // sensitivity knob: f_e = p_e instead of argmax counts
};

struct TaskLossResult {
  double value = 0.0;
  std::vector<Matrix> dy;  // same shapes as y
};

// Mean squared error over unmasked positions (averaged over position * channel
// elements). mask[b][t] != 0 keeps a position; null mask keeps everything.
TaskLossResult task_mse(const std::vector<Matrix>& y, const std::vector<Matrix>& target,
                        const std::vector<std::vector<std::uint8_t>>* mask = nullptr);

struct BalanceLossResult {
  double value = 0.0;  // includes weight and the warmup turn-on factor
  Matrix dgates;       // batch x experts
};

// Switch-formulation balance loss: E * sum_e f_e p_e globally plus the same
// quantity per sigma-bucket (averaged over nonempty buckets, scaled by
// per_bucket_coeff). Hard turn-on at ceil(warmup_ratio * total_steps).
BalanceLossResult switch_balance(const Matrix& gates, std::size_t step, std::size_t total_steps,
                                 const BalanceConfig& cfg, const std::vector<std::size_t>& bucket_ids);

std::size_t sigma_bucket(double sigma, std::size_t bucket_count);

struct OrthogonalityLossResult {
  double value = 0.0;
  std::vector<std::vector<Matrix>> dexpert_outputs;  // batch x experts, each L x d
};

// Sum over samples i and ordered active pairs (j, k), j != k, of
// || <x_ij, x_ik> / (<x_ik, x_ik> + eps) * x_ik ||^2, inner products taken over
// the flattened per-expert output. Active means gate > 0; under dense softmax
// that is every expert, so the indicator only bites under band masking.
OrthogonalityLossResult output_orthogonality_loss(
    const std::vector<std::vector<Matrix>>& expert_outputs, const Matrix& gates, double eps);

struct VarianceLossResult {
  double value = 0.0;
  Matrix dscores;  // batch x experts
};

// -sum_{i,j} (s_ij - mean_i s_ij)^2 / n: rewards decisive gates; zero (with a
// zero, permutation-symmetric gradient) when every sample scores identically.
VarianceLossResult routing_variance_loss(const Matrix& scores);

}  // namespace orthomoe
