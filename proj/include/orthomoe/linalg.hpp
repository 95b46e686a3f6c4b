// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "orthomoe/matrix.hpp"

namespace orthomoe {

// Householder QR, thin Q with the implicit R diagonal made positive so the
// result is deterministic and identity maps to identity.
// Throws RankDeficient when a pivot falls below 1e-12 x the original column
// norm.
Matrix qr_orthonormalize(const Matrix& m);

// Orthonormal basis for colspace(m) that never throws on rank deficiency:
// numerically dead directions are replaced by canonical-basis completions.
// Internal building block of the randomized SVD range finder.
Matrix orthonormalize_with_completion(const Matrix& m);

// Exact linear solve A X = B via partial-pivoting LU. Never a truncated
// series. Throws Singular below a 1e-12 relative pivot threshold.
Matrix solve(const Matrix& a, const Matrix& b);

// Determinant via the same LU factorization.
double determinant(const Matrix& a);

struct Svd {
  Matrix u;                   // rows x q, orthonormal columns
  std::vector<double> sigma;  // length q, nonincreasing, nonnegative
  Matrix v;                   // cols x q, orthonormal columns
};

// Halko-style randomized SVD: Gaussian sketch, power iterations with
// re-orthonormalization, then an exact SVD of the small projected factor via
// one-sided Jacobi. Deterministic given rng_seed; U columns sign-canonicalized
// (largest-magnitude entry positive).
Svd randomized_svd(const Matrix& w, std::size_t target_rank, std::size_t power_iters,
                   std::uint64_t rng_seed);

// a^T b. A plain product; named so invariant tests read declaratively.
Matrix gram(const Matrix& a, const Matrix& b);

}  // namespace orthomoe
