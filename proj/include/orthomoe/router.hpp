// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "orthomoe/matrix.hpp"

namespace orthomoe {

enum class PoolKind { Rms, Mean, Max };
enum class BandLayout { Interleaved, Contiguous };

const char* pool_kind_name(PoolKind kind);
PoolKind pool_kind_from_name(const std::string& name);
const char* band_layout_name(BandLayout layout);
BandLayout band_layout_from_name(const std::string& name);

struct RouterConfig {
  std::size_t experts = 1;
  std::size_t input_dim = 0;  // pooled-input width fed to the gate
  PoolKind pool = PoolKind::Rms;
  std::size_t sigma_feature_dim = 0;  // 0 disables sigma features; must be even
  std::size_t band_count = 0;         // 0 disables hard masking
  std::vector<double> band_edges;     // band_count + 1 ascending values, 0 .. 1
  BandLayout band_layout = BandLayout::Interleaved;

  void validate() const;
};

struct RouterState {
  RouterConfig config;
  Matrix weights;  // (input_dim + sigma_feature_dim) x experts
  Matrix bias;     // 1 x experts

  static RouterState zero_init(RouterConfig cfg);
};

// Sequence pooling, one row per sample. tokens[b] is L x input_dim.
Matrix pool(const std::vector<Matrix>& tokens, PoolKind kind);

// Sinusoidal features at geometric frequencies 2^k: pairs
// (sin(2 pi 2^k sigma), cos(2 pi 2^k sigma)).
std::vector<double> sigma_features(double sigma, std::size_t dim);

std::size_t band_of_sigma(const RouterConfig& cfg, double sigma);
std::size_t expert_band(const RouterConfig& cfg, std::size_t expert);

struct RouteResult {
  Matrix gates;   // batch x experts, rows on the simplex
  Matrix logits;  // batch x experts, pre-mask affine scores
  Matrix inputs;  // batch x (input_dim + sigma_feature_dim)
};

RouteResult route(const RouterState& st, const Matrix& pooled, const std::vector<double>& sigma);

// Mean over the batch of H(g_b)/log E with 0 log 0 := 0. For E = 1 the
// uniform prior and one-hot routing coincide; reported as 1.
double normalized_entropy(const Matrix& gates);

}  // namespace orthomoe
