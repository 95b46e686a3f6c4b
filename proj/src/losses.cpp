// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/losses.hpp"

#include <algorithm>
#include <cmath>

namespace orthomoe {

TaskLossResult task_mse(const std::vector<Matrix>& y, const std::vector<Matrix>& target,
                        const std::vector<std::vector<std::uint8_t>>* mask) {
  if (y.size() != target.size()) throw Error(Error::Code::ShapeMismatch, "task_mse: batch mismatch");
  if (y.empty()) throw Error(Error::Code::ShapeMismatch, "task_mse: empty batch");
  std::size_t kept_positions = 0;
  const std::size_t d = y.front().cols;
  for (std::size_t b = 0; b < y.size(); ++b) {
    require_shape(y[b], target[b], "task_mse: y/target shape mismatch");
    if (mask && (*mask)[b].size() != y[b].rows)
      throw Error(Error::Code::ShapeMismatch, "task_mse: mask length mismatch");
    for (std::size_t t = 0; t < y[b].rows; ++t)
      if (!mask || (*mask)[b][t]) ++kept_positions;
  }
  if (kept_positions == 0) throw Error(Error::Code::EmptyMask, "task_mse: all positions masked");
  const double denom = static_cast<double>(kept_positions) * static_cast<double>(d);

  TaskLossResult res;
  res.dy.reserve(y.size());
  for (std::size_t b = 0; b < y.size(); ++b) {
    Matrix g(y[b].rows, y[b].cols);
    for (std::size_t t = 0; t < y[b].rows; ++t) {
      if (mask && !(*mask)[b][t]) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = y[b](t, j) - target[b](t, j);
        res.value += diff * diff;
        g(t, j) = 2.0 * diff / denom;
      }
    }
    res.dy.push_back(std::move(g));
  }
  res.value /= denom;
  return res;
}

std::size_t sigma_bucket(double sigma, std::size_t bucket_count) {
  if (bucket_count == 0) return 0;
  const auto b = static_cast<std::size_t>(std::floor(sigma * static_cast<double>(bucket_count)));
  return std::min(b, bucket_count - 1);
}

namespace {

// E * sum_e f_e p_e over the given sample subset; accumulates d/dgates.
double switch_term(const Matrix& gates, const std::vector<std::size_t>& samples, bool soft_counts,
                   double grad_scale, Matrix& dgates) {
  const std::size_t e = gates.cols;
  const double n = static_cast<double>(samples.size());
  std::vector<double> assigned(e, 0.0), mean_gate(e, 0.0);
  for (std::size_t b : samples) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < e; ++k)
      if (gates(b, k) > gates(b, arg)) arg = k;
    assigned[arg] += 1.0;
    for (std::size_t k = 0; k < e; ++k) mean_gate[k] += gates(b, k);
  }
  double value = 0.0;
  for (std::size_t k = 0; k < e; ++k) {
    assigned[k] /= n;
    mean_gate[k] /= n;
    const double f = soft_counts ? mean_gate[k] : assigned[k];
    value += f * mean_gate[k];
  }
  value *= static_cast<double>(e);
  const double scale = grad_scale * static_cast<double>(e) / n;
  for (std::size_t b : samples)
    for (std::size_t k = 0; k < e; ++k) {
      const double df = soft_counts ? 2.0 * mean_gate[k] : assigned[k];
      dgates(b, k) += scale * df;
    }
  return value;
}

}  // namespace

BalanceLossResult switch_balance(const Matrix& gates, std::size_t step, std::size_t total_steps,
                                 const BalanceConfig& cfg, const std::vector<std::size_t>& bucket_ids) {
  if (bucket_ids.size() != gates.rows)
    throw Error(Error::Code::ShapeMismatch, "switch_balance: bucket_ids batch mismatch");
  BalanceLossResult res;
  res.dgates = Matrix(gates.rows, gates.cols);
  const auto turn_on =
      static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (cfg.weight == 0.0 || step < turn_on) return res;

  std::vector<std::size_t> all(gates.rows);
  for (std::size_t b = 0; b < gates.rows; ++b) all[b] = b;
  double total = switch_term(gates, all, cfg.soft_counts, cfg.weight, res.dgates);

  if (cfg.per_bucket_coeff != 0.0 && cfg.bucket_count > 0) {
    std::vector<std::vector<std::size_t>> buckets(cfg.bucket_count);
    for (std::size_t b = 0; b < gates.rows; ++b) {
      if (bucket_ids[b] >= cfg.bucket_count)
        throw Error(Error::Code::ShapeMismatch, "switch_balance: bucket id out of range");
      buckets[bucket_ids[b]].push_back(b);
    }
    std::size_t nonempty = 0;
    for (const auto& members : buckets)
      if (!members.empty()) ++nonempty;
    if (nonempty > 0) {
      const double bucket_scale = cfg.weight * cfg.per_bucket_coeff / static_cast<double>(nonempty);
      double bucket_sum = 0.0;
      for (const auto& members : buckets) {
        if (members.empty()) continue;
        bucket_sum += switch_term(gates, members, cfg.soft_counts, bucket_scale, res.dgates);
      }
      total += cfg.per_bucket_coeff * bucket_sum / static_cast<double>(nonempty);
    }
  }
  res.value = cfg.weight * total;
  return res;
}

OrthogonalityLossResult output_orthogonality_loss(
    const std::vector<std::vector<Matrix>>& expert_outputs, const Matrix& gates, double eps) {
  if (eps <= 0.0) throw Error(Error::Code::InvalidConfig, "output_orthogonality_loss: eps must be > 0");
  if (expert_outputs.size() != gates.rows)
    throw Error(Error::Code::ShapeMismatch, "output_orthogonality_loss: batch mismatch");
  OrthogonalityLossResult res;
  res.dexpert_outputs.resize(expert_outputs.size());
  for (std::size_t i = 0; i < expert_outputs.size(); ++i) {
    const auto& outs = expert_outputs[i];
    if (outs.size() != gates.cols)
      throw Error(Error::Code::ShapeMismatch, "output_orthogonality_loss: expert count mismatch");
    auto& grads = res.dexpert_outputs[i];
    grads.reserve(outs.size());
    for (const Matrix& o : outs) grads.emplace_back(o.rows, o.cols);
    for (std::size_t j = 0; j < outs.size(); ++j) {
      if (gates(i, j) <= 0.0) continue;
      for (std::size_t k = 0; k < outs.size(); ++k) {
        if (k == j || gates(i, k) <= 0.0) continue;
        const double a = dot(outs[j], outs[k]);
        const double b = dot(outs[k], outs[k]);
        const double den = b + eps;
        // term = a^2 b / den^2
        res.value += a * a * b / (den * den);
        const double d_j = 2.0 * a * b / (den * den);
        add_scaled(grads[j], outs[k], d_j);
        add_scaled(grads[k], outs[j], d_j);
        add_scaled(grads[k], outs[k], 2.0 * a * a * (eps - b) / (den * den * den));
      }
    }
  }
  return res;
}

VarianceLossResult routing_variance_loss(const Matrix& scores) {
  if (scores.rows == 0) throw Error(Error::Code::ShapeMismatch, "routing_variance_loss: empty scores");
  const double n = static_cast<double>(scores.rows);
  VarianceLossResult res;
  res.dscores = Matrix(scores.rows, scores.cols);
  for (std::size_t j = 0; j < scores.cols; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < scores.rows; ++i) mean += scores(i, j);
    mean /= n;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      const double dev = scores(i, j) - mean;
      res.value -= dev * dev / n;
      // sum_i (s_ij - mean_j) = 0, so the mean's own dependence drops out
      res.dscores(i, j) = -2.0 * dev / n;
    }
  }
  return res;
}

}  // namespace orthomoe
