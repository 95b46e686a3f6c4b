// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "orthomoe/matrix.hpp"

namespace orthomoe {

// Unconstrained square seed; only its skew part A = s - s^T enters the
// Cayley map, so training never needs a manifold projection.
struct CayleySeed {
  Matrix s;

  explicit CayleySeed(Matrix seed) : s(std::move(seed)) {
    if (s.rows != s.cols || s.rows == 0)
      throw Error(Error::Code::DimMismatch, "CayleySeed: seed must be square");
  }
};

Matrix skew_part(const Matrix& s);

// R = (I - A)(I + A)^{-1}, computed with an exact solve. Orthogonal (and in
// the special orthogonal component) for any finite seed; I + A is always
// invertible because A has purely imaginary eigenvalues.
Matrix cayley_forward(const CayleySeed& seed);

// d<upstream, R>/ds. Uses dR = -(I + R) dA (I + A)^{-1}; two solves, no
// explicit inverse.
Matrix cayley_vjp(const CayleySeed& seed, const Matrix& upstream);

}  // namespace orthomoe
