// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "orthomoe/linalg.hpp"
#include "orthomoe/optim.hpp"
#include "orthomoe/rng.hpp"

namespace orthomoe {

namespace {

// fixed stream tags for seed derivation
constexpr std::uint64_t kTaskStream = 0x7461736bULL;    // "task"
constexpr std::uint64_t kDataStream = 0x64617461ULL;    // "data"
constexpr std::uint64_t kProbeStream = 0x70726f62ULL;   // "prob"
constexpr std::uint64_t kInitStream = 0x696e6974ULL;    // "init"
constexpr std::uint64_t kWarmupStream = 0x7761726dULL;  // "warm"

std::uint64_t fold_double(std::uint64_t h, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  h ^= bits;
  return h * 0x100000001B3ULL;
}

std::uint64_t fold_batch(std::uint64_t h, const Batch& batch) {
  for (const Matrix& m : batch.x)
    for (double v : m.data) h = fold_double(h, v);
  for (const Matrix& m : batch.target)
    for (double v : m.data) h = fold_double(h, v);
  for (std::size_t s : batch.style_ids) h = fold_double(h, static_cast<double>(s));
  for (double s : batch.sigma) h = fold_double(h, s);
  return h;
}

}  // namespace

RouterInput TrainConfig::resolved_router_input() const {
  switch (router_input) {
    case RouterInputMode::Bottleneck: return RouterInput::Bottleneck;
    case RouterInputMode::Raw: return RouterInput::Raw;
    case RouterInputMode::Default:
      return variant == Variant::Ortho ? RouterInput::Bottleneck : RouterInput::Raw;
  }
  return RouterInput::Bottleneck;
}

void TrainConfig::validate() const {
  if (d_in == 0 || d_out == 0 || n_layers == 0 || seq_len == 0 || batch == 0 || experts == 0 ||
      rank == 0 || log_every == 0)
    throw Error(Error::Code::InvalidConfig, "train config: counts must be >= 1");
  if (n_layers > 1 && d_in != d_out)
    throw Error(Error::Code::InvalidConfig, "train config: stacked layers need d_in == d_out");
  if (lr <= 0.0 || router_lr_mult <= 0.0)
    throw Error(Error::Code::InvalidConfig, "train config: rates must be > 0");
  if (weight_decay < 0.0 || jitter_sigma < 0.0 || lo_weight < 0.0 || lv_weight < 0.0 || lo_eps <= 0.0)
    throw Error(Error::Code::InvalidConfig, "train config: negative weight");
  if (balance.weight < 0.0 || balance.warmup_ratio < 0.0 || balance.warmup_ratio > 1.0)
    throw Error(Error::Code::InvalidConfig, "train config: bad balance config");
  if (expert_warmup_ratio < 0.0 || expert_warmup_ratio > 1.0)
    throw Error(Error::Code::InvalidConfig, "train config: bad expert warm-up ratio");
  if (task.styles == 0) throw Error(Error::Code::InvalidConfig, "train config: styles must be >= 1");
}

namespace {

// One adapted layer plus its optimizer slots.
struct LayerSlots {
  AdamWSlot s_q;
  std::vector<AdamWSlot> s_p;
  AdamWSlot lambda;
  AdamWSlot a_shared;
  std::vector<AdamWSlot> b_experts;
  AdamWSlot router_weights;
  AdamWSlot router_bias;
};

struct StepEval {
  std::vector<ForwardResult> fwd;   // per layer
  std::vector<Gradients> grads;     // per layer
  double task_loss = 0.0;
  double balance_loss = 0.0;
  double total_loss = 0.0;
};

struct Trainer {
  TrainConfig cfg;
  SyntheticTask task;
  std::vector<AdapterState> layers;
  std::vector<LayerSlots> slots;
  Rng data_rng;
  Rng warmup_rng;
  TrainLog log;

  explicit Trainer(const TrainConfig& config)
      : cfg(config),
        task(make_synthetic_task(config.task, config.d_in, config.d_out, config.n_layers,
                                 config.seq_len, config.experts, config.rank,
                                 derive_seed(config.seed, kTaskStream))),
        data_rng(derive_seed(config.seed, kDataStream)),
        warmup_rng(derive_seed(config.seed, kWarmupStream)) {
    const RouterInput rin = cfg.resolved_router_input();
    layers.reserve(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::uint64_t seed = derive_seed(cfg.seed, kInitStream + l);
      if (cfg.variant == Variant::Ortho)
        layers.push_back(init_ortho(task.w0[l], cfg.experts, cfg.rank, cfg.alpha, seed, cfg.router, rin));
      else
        layers.push_back(init_baseline(task.w0[l], cfg.variant, cfg.jitter_sigma, cfg.experts,
                                       cfg.rank, cfg.alpha, seed, cfg.router, rin));
      for (const std::string& w : layers.back().warnings) log.warnings.push_back(w);
    }
    slots.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      slots[l].s_p.resize(cfg.experts);
      slots[l].b_experts.resize(cfg.experts);
    }
    if (cfg.expert_warmup_ratio == 0.0)
      for (const AdapterState& st : layers)
        if (st.fallback_shared_basis) {
          log.warnings.push_back(
              "fallback shared basis without expert warm-up: no symmetry breaker is active");
          break;
        }
    log.config = cfg;
    log.config.router_input = rin == RouterInput::Bottleneck ? RouterInputMode::Bottleneck
                                                             : RouterInputMode::Raw;
  }

  StepEval evaluate(const Batch& batch, std::size_t step) {
    StepEval ev;
    const bool want_expert_outputs = cfg.lo_weight > 0.0;
    const double layer_mean = 1.0 / static_cast<double>(cfg.n_layers);

    std::vector<std::vector<Matrix>> activations;  // post-tanh inputs per layer > 0
    const std::vector<Matrix>* input = &batch.x;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      ev.fwd.push_back(forward(layers[l], *input, batch.sigma, want_expert_outputs));
      if (l + 1 < cfg.n_layers) {
        std::vector<Matrix> act = ev.fwd[l].y;
        for (Matrix& m : act)
          for (double& v : m.data) v = std::tanh(v);
        activations.push_back(std::move(act));
        input = &activations.back();
      }
    }

    TaskLossResult task_loss = task_mse(ev.fwd.back().y, batch.target);
    ev.task_loss = task_loss.value;
    ev.total_loss = task_loss.value;

    std::vector<std::size_t> bucket_ids(batch.sigma.size());
    for (std::size_t b = 0; b < batch.sigma.size(); ++b)
      bucket_ids[b] = sigma_bucket(batch.sigma[b], cfg.balance.bucket_count);

    std::vector<Matrix> dgates(cfg.n_layers);
    std::vector<Matrix> dlogits(cfg.n_layers);
    std::vector<std::vector<std::vector<Matrix>>> dexpert(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const Matrix& gates = ev.fwd[l].cache.routed.gates;
      BalanceLossResult bal = switch_balance(gates, step, cfg.total_steps, cfg.balance, bucket_ids);
      ev.balance_loss += bal.value * layer_mean;
      scale_in_place(bal.dgates, layer_mean);
      dgates[l] = std::move(bal.dgates);
      if (cfg.lv_weight > 0.0) {
        VarianceLossResult lv = routing_variance_loss(ev.fwd[l].cache.routed.logits);
        ev.total_loss += cfg.lv_weight * layer_mean * lv.value;
        scale_in_place(lv.dscores, cfg.lv_weight * layer_mean);
        dlogits[l] = std::move(lv.dscores);
      }
      if (want_expert_outputs) {
        OrthogonalityLossResult lo =
            output_orthogonality_loss(ev.fwd[l].cache.expert_outputs, gates, cfg.lo_eps);
        ev.total_loss += cfg.lo_weight * layer_mean * lo.value;
        for (auto& per_sample : lo.dexpert_outputs)
          for (Matrix& m : per_sample) scale_in_place(m, cfg.lo_weight * layer_mean);
        dexpert[l] = std::move(lo.dexpert_outputs);
      }
    }
    ev.total_loss += ev.balance_loss;
    if (!std::isfinite(ev.total_loss))
      throw Error(Error::Code::NonFiniteLoss,
                  "non-finite loss at step " + std::to_string(step) +
                      " (task=" + std::to_string(ev.task_loss) + ")");

    ev.grads.resize(cfg.n_layers);
    std::vector<Matrix> dy = std::move(task_loss.dy);
    for (std::size_t l = cfg.n_layers; l-- > 0;) {
      BackwardExtras extras;
      extras.dgates = &dgates[l];
      if (cfg.lv_weight > 0.0) extras.dlogits = &dlogits[l];
      if (want_expert_outputs) extras.dexpert_outputs = &dexpert[l];
      ev.grads[l] = backward(layers[l], ev.fwd[l].cache, dy, extras);
      if (l > 0) {
        // through the fixed tanh between layers
        dy = std::move(ev.grads[l].x);
        const std::vector<Matrix>& act = activations[l - 1];
        for (std::size_t b = 0; b < dy.size(); ++b)
          for (std::size_t i = 0; i < dy[b].size(); ++i)
            dy[b].data[i] *= 1.0 - act[b].data[i] * act[b].data[i];
      }
    }
    return ev;
  }

  void apply_warmup(std::vector<Gradients>& grads, std::size_t step) {
    if (cfg.expert_warmup_ratio <= 0.0) return;
    const auto window =
        static_cast<std::size_t>(std::ceil(cfg.expert_warmup_ratio * double(cfg.total_steps)));
    if (step >= window) return;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      if (!layers[l].fallback_shared_basis) continue;
      const std::size_t chosen = warmup_rng.uniform_index(cfg.experts);
      for (std::size_t e = 0; e < cfg.experts; ++e) {
        if (e == chosen) continue;
        if (cfg.variant == Variant::Ortho)
          grads[l].s_p[e].fill(0.0);
        else
          grads[l].b_experts[e].fill(0.0);
      }
    }
  }

  void apply_updates(std::vector<Gradients>& grads, std::size_t opt_step) {
    AdamWConfig adapter_cfg{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    AdamWConfig router_cfg = adapter_cfg;
    router_cfg.lr = cfg.lr * cfg.router_lr_mult;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      AdapterState& st = layers[l];
      LayerSlots& sl = slots[l];
      Gradients& g = grads[l];
      if (cfg.variant == Variant::Ortho) {
        adamw_step(st.s_q, g.s_q, sl.s_q, opt_step, adapter_cfg);
        for (std::size_t e = 0; e < cfg.experts; ++e)
          adamw_step(st.s_p[e], g.s_p[e], sl.s_p[e], opt_step, adapter_cfg);
        adamw_step(st.lambda, g.lambda, sl.lambda, opt_step, adapter_cfg);
      } else {
        adamw_step(st.a_shared, g.a_shared, sl.a_shared, opt_step, adapter_cfg);
        for (std::size_t e = 0; e < cfg.experts; ++e)
          adamw_step(st.b_experts[e], g.b_experts[e], sl.b_experts[e], opt_step, adapter_cfg);
      }
      if (!cfg.freeze_router) {
        adamw_step(st.router.weights, g.router_weights, sl.router_weights, opt_step, router_cfg);
        adamw_step(st.router.bias, g.router_bias, sl.router_bias, opt_step, router_cfg);
      }
    }
  }

  double expert_divergence() const {
    double worst = 0.0;
    for (const AdapterState& st : layers)
      for (std::size_t e = 0; e < st.experts; ++e)
        for (std::size_t e2 = e + 1; e2 < st.experts; ++e2) {
          const Matrix diff = st.variant == Variant::Ortho ? st.s_p[e] - st.s_p[e2]
                                                           : st.b_experts[e] - st.b_experts[e2];
          worst = std::max(worst, frobenius_norm(diff));
        }
    return worst;
  }

  double gram_offdiag_max() const {
    double worst = 0.0;
    for (const AdapterState& st : layers) {
      const Matrix diag = deadlock_diagnostic(st);
      for (std::size_t i = 0; i < st.experts; ++i)
        for (std::size_t j = 0; j < st.experts; ++j)
          if (i != j) worst = std::max(worst, diag(i, j));
    }
    return worst;
  }

  TrainLogRow make_row(std::size_t step, const StepEval& ev, const Batch& batch) {
    TrainLogRow row;
    row.step = step;
    row.task_loss = ev.task_loss;
    row.balance_loss = ev.balance_loss;
    row.util_expert.assign(cfg.experts, 0.0);
    const std::size_t buckets = std::max<std::size_t>(cfg.balance.bucket_count, 1);
    row.util_bucket.assign(buckets, std::vector<double>(cfg.experts, 0.0));
    std::vector<double> bucket_counts(buckets, 0.0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const Matrix& gates = ev.fwd[l].cache.routed.gates;
      row.entropy_layer.push_back(normalized_entropy(gates));
      for (std::size_t b = 0; b < gates.rows; ++b) {
        const std::size_t bucket = sigma_bucket(batch.sigma[b], buckets);
        for (std::size_t e = 0; e < cfg.experts; ++e) {
          row.util_expert[e] += gates(b, e);
          row.util_bucket[bucket][e] += gates(b, e);
        }
        bucket_counts[bucket] += 1.0;
      }
    }
    const double denom = double(cfg.n_layers) * double(batch.x.size());
    for (double& u : row.util_expert) u /= denom;
    for (std::size_t c = 0; c < buckets; ++c)
      if (bucket_counts[c] > 0.0)
        for (double& u : row.util_bucket[c]) u /= bucket_counts[c];
    row.entropy_mean = 0.0;
    for (double h : row.entropy_layer) row.entropy_mean += h;
    row.entropy_mean /= double(cfg.n_layers);
    double gn = 0.0;
    for (const Gradients& g : ev.grads) {
      const double n = g.trainable_norm();
      gn += n * n;
    }
    row.grad_norm_total = std::sqrt(gn);
    row.gram_offdiag_max = gram_offdiag_max();
    row.expert_divergence = expert_divergence();
    return row;
  }

  TrainLog run() {
    {
      Rng probe_rng(derive_seed(cfg.seed, kProbeStream));
      Batch probe = generate_batch(task, cfg.batch, probe_rng);
      StepEval ev = evaluate(probe, 0);
      log.rows.push_back(make_row(0, ev, probe));
    }
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
      Batch batch = generate_batch(task, cfg.batch, data_rng);
      log.data_checksum = fold_batch(log.data_checksum, batch);
      StepEval ev = evaluate(batch, step);
      apply_warmup(ev.grads, step);
      const bool log_now = (step + 1) % cfg.log_every == 0 || step + 1 == cfg.total_steps;
      TrainLogRow row;
      if (log_now) row = make_row(step + 1, ev, batch);
      apply_updates(ev.grads, step + 1);
      if (log_now) log.rows.push_back(std::move(row));
    }
    return std::move(log);
  }
};

}  // namespace

TrainLog run_experiment(const TrainConfig& cfg) {
  cfg.validate();
  Trainer trainer(cfg);
  return trainer.run();
}

EntropySummary entropy_summary(const TrainLog& log, double onset_threshold) {
  EntropySummary s;
  for (const TrainLogRow& row : log.rows) {
    s.curve.emplace_back(row.step, row.entropy_mean);
    if (!s.onset && row.entropy_mean < onset_threshold) s.onset = row.step;
  }
  if (!log.rows.empty()) {
    const TrainLogRow& last = log.rows.back();
    s.final_entropy = last.entropy_mean;
    s.final_task_loss = last.task_loss;
    const double alive_floor = 1.0 / (4.0 * static_cast<double>(log.config.experts));
    for (double u : last.util_expert)
      if (u > alive_floor) ++s.experts_alive;
  }
  return s;
}

}  // namespace orthomoe
