// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/task.hpp"

#include <algorithm>
#include <cmath>

#include "orthomoe/linalg.hpp"

namespace orthomoe {

namespace {

Matrix random_orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
  return orthonormalize_with_completion(rng.gaussian_matrix(rows, cols));
}

// Random rotation (det +1) so every style's delta has the same within-slice
// spectrum and differs only in orientation.
Matrix random_rotation(std::size_t n, Rng& rng) {
  Matrix o = random_orthonormal(n, n, rng);
  if (determinant(o) < 0.0)
    for (std::size_t i = 0; i < n; ++i) o(i, 0) = -o(i, 0);
  return o;
}

}  // namespace

SyntheticTask make_synthetic_task(const TaskSpec& spec, std::size_t d_in, std::size_t d_out,
                                  std::size_t n_layers, std::size_t seq_len, std::size_t experts,
                                  std::size_t rank, std::uint64_t seed) {
  if (spec.styles == 0 || n_layers == 0 || seq_len == 0 || experts == 0 || rank == 0)
    throw Error(Error::Code::InvalidConfig, "make_synthetic_task: counts must be >= 1");
  if (n_layers > 1 && d_in != d_out)
    throw Error(Error::Code::InvalidConfig, "make_synthetic_task: stacked layers need d_in == d_out");
  const std::size_t min_d = std::min(d_in, d_out);
  if (experts * rank > min_d)
    throw Error(Error::Code::InvalidConfig,
                "make_synthetic_task: teacher slices need min(d) >= experts * rank");

  SyntheticTask task;
  task.spec = spec;
  task.d_in = d_in;
  task.d_out = d_out;
  task.seq_len = seq_len;
  task.slice_rank = rank;

  Rng rng(seed);
  std::vector<double> spectrum(min_d);
  for (std::size_t i = 0; i < min_d; ++i)
    spectrum[i] = spec.spectrum_top * std::pow(spec.spectrum_within_decay, double(i % rank)) *
                  std::pow(spec.spectrum_slice_decay, double(i / rank));

  task.w0.reserve(n_layers);
  task.teacher_delta.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix u0 = random_orthonormal(d_out, min_d, rng);
    Matrix v0 = random_orthonormal(d_in, min_d, rng);
    Matrix us = u0;
    for (std::size_t i = 0; i < d_out; ++i)
      for (std::size_t j = 0; j < min_d; ++j) us(i, j) *= spectrum[j];
    task.w0.push_back(multiply_a_bt(us, v0));

    Matrix v_r(d_in, rank);
    for (std::size_t i = 0; i < d_in; ++i)
      for (std::size_t j = 0; j < rank; ++j) v_r(i, j) = v0(i, j);
    if (l == 0) task.input_basis = v_r;

    Matrix u_top(d_out, experts * rank);
    for (std::size_t i = 0; i < d_out; ++i)
      for (std::size_t j = 0; j < experts * rank; ++j) u_top(i, j) = u0(i, j);

    task.teacher_delta[l].reserve(spec.styles);
    for (std::size_t k = 0; k < spec.styles; ++k) {
      const std::size_t slice = (k % experts) * rank;
      Matrix u_slice(d_out, rank);
      for (std::size_t i = 0; i < d_out; ++i)
        for (std::size_t j = 0; j < rank; ++j) u_slice(i, j) = u0(i, slice + j);
      Matrix delta = multiply_a_bt(multiply(u_slice, random_rotation(rank, rng)), v_r);
      scale_in_place(delta, spec.teacher_scale);
      // fit check: delta must live in span(top-Er left) x span(top-r right)
      if (spec.teacher_scale != 0.0) {
        Matrix projected = multiply(u_top, multiply(multiply_at_b(u_top, delta), multiply_a_bt(v_r, v_r)));
        const double residual = frobenius_norm(delta - projected) / frobenius_norm(delta);
        task.max_fit_residual = std::max(task.max_fit_residual, residual);
      }
      task.teacher_delta[l].push_back(std::move(delta));
    }
  }
  if (task.max_fit_residual > 0.1)
    throw Error(Error::Code::InvalidConfig, "make_synthetic_task: teacher delta fit check failed");

  task.style_boost.resize(spec.styles);
  for (std::size_t k = 0; k < spec.styles; ++k) {
    task.style_boost[k].assign(rank, 1.0);
    task.style_boost[k][k % rank] = std::sqrt(1.0 + spec.style_contrast);
  }

  // pre-run checks: styles distinguishable, deltas inside the representable family
  if (spec.teacher_scale != 0.0 && spec.styles > 1) {
    double min_ratio = HUGE_VAL;
    for (std::size_t k = 0; k < spec.styles; ++k)
      for (std::size_t k2 = 0; k2 < spec.styles; ++k2) {
        if (k == k2) continue;
        const double ratio = frobenius_norm(task.teacher_delta[0][k] - task.teacher_delta[0][k2]) /
                             frobenius_norm(task.teacher_delta[0][k]);
        min_ratio = std::min(min_ratio, ratio);
      }
    task.min_pairwise_distance = min_ratio;
    if (!(min_ratio > 0.5))
      throw Error(Error::Code::InvalidConfig, "make_synthetic_task: teacher deltas not distinguishable");
  }
  return task;
}

std::vector<Matrix> teacher_forward(const SyntheticTask& task, const std::vector<Matrix>& x,
                                    const std::vector<std::size_t>& style_ids) {
  if (x.size() != style_ids.size())
    throw Error(Error::Code::ShapeMismatch, "teacher_forward: batch mismatch");
  std::vector<Matrix> out;
  out.reserve(x.size());
  for (std::size_t b = 0; b < x.size(); ++b) {
    const std::size_t k = style_ids[b];
    if (k >= task.spec.styles) throw Error(Error::Code::ShapeMismatch, "teacher_forward: bad style id");
    Matrix h = x[b];
    for (std::size_t l = 0; l < task.w0.size(); ++l) {
      Matrix w = task.w0[l];
      if (task.spec.teacher_scale != 0.0) w = w + task.teacher_delta[l][k];
      Matrix y = multiply_a_bt(h, w);
      if (l + 1 < task.w0.size()) {
        for (double& v : y.data) v = std::tanh(v);
      }
      h = std::move(y);
    }
    out.push_back(std::move(h));
  }
  return out;
}

Batch generate_batch(const SyntheticTask& task, std::size_t batch, Rng& rng) {
  Batch out;
  out.x.reserve(batch);
  out.style_ids.reserve(batch);
  out.sigma.reserve(batch);
  const std::size_t r = task.slice_rank;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t style = rng.uniform_index(task.spec.styles);
    out.style_ids.push_back(style);
    out.sigma.push_back(rng.uniform());
    const auto& boost = task.style_boost[style];
    Matrix x(task.seq_len, task.d_in);
    for (std::size_t t = 0; t < task.seq_len; ++t) {
      for (std::size_t j = 0; j < task.d_in; ++j) x(t, j) = rng.normal();
      // shape the covariance along the teacher's top right-singular directions
      for (std::size_t c = 0; c < r; ++c) {
        if (boost[c] == 1.0) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < task.d_in; ++j) z += task.input_basis(j, c) * x(t, j);
        const double adj = (boost[c] - 1.0) * z;
        for (std::size_t j = 0; j < task.d_in; ++j) x(t, j) += task.input_basis(j, c) * adj;
      }
    }
    out.x.push_back(std::move(x));
  }
  out.target = teacher_forward(task, out.x, out.style_ids);
  if (task.spec.target_noise_std > 0.0)
    for (Matrix& t : out.target)
      for (double& v : t.data) v += task.spec.target_noise_std * rng.normal();
  return out;
}

}  // namespace orthomoe
