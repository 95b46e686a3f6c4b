// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "orthomoe/matrix.hpp"
#include "orthomoe/rng.hpp"

namespace orthomoe {

// Multi-style regression teacher. Each layer's base weight is built with a
// known SVD; the per-style deltas live in distinct slices of that SVD so
// sample clusters push different adapter experts in different directions,
// and the per-style input covariance (diagonal in the right-singular frame,
// zero-mean per token) lets a content-reading router tell styles apart.
struct TaskSpec {
  std::size_t styles = 4;
  double teacher_scale = 0.6;     // delta magnitude relative to unit bottleneck energy
  double style_contrast = 1.5;    // extra variance on a style's signature channel
  double target_noise_std = 0.0;  // irreducible additive target noise
  double spectrum_top = 3.0;
  double spectrum_within_decay = 0.93;  // per index inside a slice
  double spectrum_slice_decay = 0.55;   // per slice boundary
};

struct SyntheticTask {
  TaskSpec spec;
  std::size_t d_in = 0, d_out = 0;
  std::size_t seq_len = 0;
  std::size_t slice_rank = 0;  // adapter rank the slices are carved at
  std::vector<Matrix> w0;                          // per layer, d_out x d_in
  std::vector<std::vector<Matrix>> teacher_delta;  // layer x style, scaled
  Matrix input_basis;                              // layer-0 V0[:, :styles_rank] used for style covariance
  std::vector<std::vector<double>> style_boost;    // style -> per-bottleneck-channel stddev factor
  double min_pairwise_distance = 0.0;              // distinguishability witness
  double max_fit_residual = 0.0;                   // representability witness
};

SyntheticTask make_synthetic_task(const TaskSpec& spec, std::size_t d_in, std::size_t d_out,
                                  std::size_t n_layers, std::size_t seq_len, std::size_t experts,
                                  std::size_t rank, std::uint64_t seed);

struct Batch {
  std::vector<Matrix> x;       // batch x (L x d_in)
  std::vector<Matrix> target;  // batch x (L x d_out)
  std::vector<std::size_t> style_ids;
  std::vector<double> sigma;  // per-sample noise level in [0, 1]
};

// Styles uniform; tokens zero-mean Gaussian with the style's covariance;
// target = teacher stack applied to x plus optional Gaussian noise.
Batch generate_batch(const SyntheticTask& task, std::size_t batch, Rng& rng);

// Teacher stack output without noise (used by generate_batch and tests).
std::vector<Matrix> teacher_forward(const SyntheticTask& task, const std::vector<Matrix>& x,
                                    const std::vector<std::size_t>& style_ids);

}  // namespace orthomoe
