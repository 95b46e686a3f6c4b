// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/cayley.hpp"

#include "orthomoe/linalg.hpp"

namespace orthomoe {

Matrix skew_part(const Matrix& s) {
  if (s.rows != s.cols) throw Error(Error::Code::DimMismatch, "skew_part: matrix must be square");
  Matrix a(s.rows, s.cols);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) a(i, j) = s(i, j) - s(j, i);
  return a;
}

Matrix cayley_forward(const CayleySeed& seed) {
  const std::size_t n = seed.s.rows;
  const Matrix a = skew_part(seed.s);
  const Matrix eye = Matrix::identity(n);
  // (I - A)(I + A)^{-1} = (I + A)^{-1}(I - A): rational functions of A commute.
  return solve(eye + a, eye - a);
}

Matrix cayley_vjp(const CayleySeed& seed, const Matrix& upstream) {
  const std::size_t n = seed.s.rows;
  if (upstream.rows != n || upstream.cols != n)
    throw Error(Error::Code::DimMismatch, "cayley_vjp: upstream shape mismatch");
  const Matrix a = skew_part(seed.s);
  const Matrix eye = Matrix::identity(n);
  const Matrix i_plus_a = eye + a;
  const Matrix r = solve(i_plus_a, eye - a);
  // grad_A <G, R> = M with M = -(I + R)^T G (I - A)^{-1}; the second factor
  // comes from one solve against (I + A) since (I - A)^T = I + A.
  const Matrix x_t = solve(i_plus_a, transpose(upstream));  // x_t = (G (I - A)^{-1})^T
  Matrix m = multiply_at_b(eye + r, transpose(x_t));
  scale_in_place(m, -1.0);
  // dA = ds - ds^T  =>  grad_s = M - M^T
  return m - transpose(m);
}

}  // namespace orthomoe
