// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "orthomoe/adapter.hpp"
#include "orthomoe/losses.hpp"
#include "orthomoe/task.hpp"

namespace orthomoe {

enum class RouterInputMode { Default, Bottleneck, Raw };

struct TrainConfig {
  Variant variant = Variant::Ortho;
  std::size_t d_in = 64, d_out = 64;
  std::size_t n_layers = 2;
  std::size_t seq_len = 128;
  std::size_t batch = 8;
  std::size_t experts = 4;
  std::size_t rank = 4;
  double alpha = 4.0;
  double lr = 1e-3;
  double router_lr_mult = 10.0;
  double weight_decay = 0.0;
  std::size_t total_steps = 3000;
  std::size_t log_every = 10;
  std::uint64_t seed = 1;
  double jitter_sigma = 0.1;
  BalanceConfig balance;
  double lo_weight = 0.0;
  double lv_weight = 0.0;
  double lo_eps = 1e-8;
  RouterConfig router;  // experts / input_dim are filled in at adapter init
  RouterInputMode router_input = RouterInputMode::Default;
  double expert_warmup_ratio = 0.0;
  bool freeze_router = false;
  TaskSpec task;

  RouterInput resolved_router_input() const;
  void validate() const;
};

struct TrainLogRow {
  std::size_t step = 0;
  double task_loss = 0.0;
  double balance_loss = 0.0;  // weighted contribution actually added
  double entropy_mean = 0.0;
  std::vector<double> entropy_layer;
  std::vector<double> util_expert;                // mean gate mass, cross-layer mean
  std::vector<std::vector<double>> util_bucket;   // bucket x expert
  double grad_norm_total = 0.0;
  double gram_offdiag_max = 0.0;    // max cross-expert overlap norm over layers
  double expert_divergence = 0.0;   // max pairwise per-expert parameter distance
};

struct TrainLog {
  TrainConfig config;  // resolved
  std::vector<TrainLogRow> rows;
  std::vector<std::string> warnings;
  std::uint64_t data_checksum = 0;  // over the consumed batch stream
};

TrainLog run_experiment(const TrainConfig& cfg);

struct EntropySummary {
  std::vector<std::pair<std::size_t, double>> curve;  // (step, mean entropy)
  std::optional<std::size_t> onset;                   // first logged step below threshold
  std::size_t experts_alive = 0;                      // final utilization > 1/(4E)
  double final_entropy = 1.0;
  double final_task_loss = 0.0;
};

EntropySummary entropy_summary(const TrainLog& log, double onset_threshold = 0.99);

}  // namespace orthomoe
