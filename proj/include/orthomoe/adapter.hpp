// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orthomoe/matrix.hpp"
#include "orthomoe/router.hpp"

namespace orthomoe {

enum class Variant { Ortho, Naive, Jittered };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Where the gate reads from: the rank-r bottleneck activation or the raw
// layer input.
enum class RouterInput { Bottleneck, Raw };

// One adapted linear layer. w0 and the bases are frozen buffers; the
// optimizer touches only seeds / lambda / router (ortho) or
// a_shared / b_experts (baselines).
struct AdapterState {
  Matrix w0;  // d_out x d_in, frozen
  Variant variant = Variant::Ortho;
  double jitter_sigma = 0.0;
  std::size_t experts = 0;
  std::size_t rank = 0;
  double alpha = 1.0;

  // ortho
  Matrix q_basis;               // r x d_in, frozen, orthonormal rows
  std::vector<Matrix> p_bases;  // experts x (d_out x r), frozen, disjoint slices
  Matrix s_q;                   // r x r, trainable
  std::vector<Matrix> s_p;      // experts x (r x r), trainable
  Matrix lambda;                // 1 x r, trainable, init 0

  // baselines
  Matrix a_shared;               // r x d_in, trainable
  std::vector<Matrix> b_experts;  // experts x (d_out x r), trainable

  RouterState router;
  RouterInput router_input = RouterInput::Bottleneck;
  bool fallback_shared_basis = false;
  std::vector<std::string> warnings;

  std::size_t d_out() const { return w0.rows; }
  std::size_t d_in() const { return w0.cols; }
  double scale() const { return alpha / static_cast<double>(rank); }
};

struct EffectiveBases {
  Matrix q_eff;               // r x d_in, orthonormal rows
  std::vector<Matrix> p_eff;  // experts x (d_out x r), orthonormal columns
  Matrix r_q;                 // r x r
  std::vector<Matrix> r_p;    // experts x (r x r)
};

struct ForwardCache {
  // input side
  std::vector<Matrix> x;      // batch x (L x d_in)
  std::vector<double> sigma;  // batch
  // bottleneck
  std::vector<Matrix> bottleneck_pre;   // batch x (L x r), before lambda
  std::vector<Matrix> bottleneck_post;  // batch x (L x r), after lambda (== pre for baselines)
  // router
  Matrix pooled;  // batch x pool width
  RouteResult routed;
  // ortho bases snapshot
  EffectiveBases bases;
  // optional per-expert pre-mix outputs, batch x experts x (L x d_out)
  std::vector<std::vector<Matrix>> expert_outputs;
  bool has_expert_outputs = false;
  // for CacheMismatch detection
  Variant variant = Variant::Ortho;
  std::size_t d_in = 0, d_out = 0, rank = 0, experts = 0;
};

struct ForwardResult {
  std::vector<Matrix> y;  // batch x (L x d_out)
  ForwardCache cache;
};

// Gradients of a scalar loss w.r.t. every trainable tensor plus the input.
struct Gradients {
  Matrix s_q;
  std::vector<Matrix> s_p;
  Matrix lambda;
  Matrix a_shared;
  std::vector<Matrix> b_experts;
  Matrix router_weights;
  Matrix router_bias;
  std::vector<Matrix> x;  // batch x (L x d_in)

  double trainable_norm() const;
};

// Extra loss terms composed downstream of forward: gradients w.r.t. gate
// probabilities, pre-mask logits, and per-expert pre-mix outputs.
struct BackwardExtras {
  const Matrix* dgates = nullptr;
  const Matrix* dlogits = nullptr;
  const std::vector<std::vector<Matrix>>* dexpert_outputs = nullptr;
};

// Disjoint-slice construction: thin randomized SVD of w0 at q = E r + 6,
// Q_basis from the top-r right singular vectors, P_bases[e] from the e-th
// r-column slice of U. Falls back to a replicated shared basis (with a
// warning record) when min(d_out, d_in) < E r.
AdapterState init_ortho(Matrix w0, std::size_t experts, std::size_t rank, double alpha,
                        std::uint64_t rng_seed, RouterConfig router_cfg,
                        RouterInput router_input = RouterInput::Bottleneck);

// Shared-basis baselines: a_shared fan-in-scaled uniform, b_experts zero
// (Naive) or i.i.d. Gaussian (Jittered).
AdapterState init_baseline(Matrix w0, Variant variant, double jitter_sigma, std::size_t experts,
                           std::size_t rank, double alpha, std::uint64_t rng_seed,
                           RouterConfig router_cfg, RouterInput router_input = RouterInput::Raw);

// Q_eff = R_q Q_basis, P_eff[e] = P_bases[e] R_p[e]. Ortho only.
EffectiveBases effective_bases(const AdapterState& st);

ForwardResult forward(const AdapterState& st, const std::vector<Matrix>& x,
                      const std::vector<double>& sigma_noise, bool keep_expert_outputs = false);

Gradients backward(const AdapterState& st, const ForwardCache& cache,
                   const std::vector<Matrix>& dy, const BackwardExtras& extras = {});

// E x E matrix of cross-expert overlap norms: ||P_eff[i]^T P_eff[j]||_F for
// ortho, ||B_i^T B_j||_F for the baselines.
Matrix deadlock_diagnostic(const AdapterState& st);

// Trainable tensors in a fixed order (frozen buffers excluded); the matching
// overload walks a Gradients in the same order.
std::vector<std::pair<std::string, Matrix*>> trainable_tensors(AdapterState& st);
std::vector<std::pair<std::string, Matrix*>> trainable_tensors(Gradients& g, Variant variant);

}  // namespace orthomoe
