// SPDX-License-Identifier: Apache-2.0
#include "orthomoe/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orthomoe/rng.hpp"

namespace orthomoe {

const char* error_code_name(Error::Code code) {
  switch (code) {
    case Error::Code::RankDeficient: return "RankDeficient";
    case Error::Code::Singular: return "Singular";
    case Error::Code::DimMismatch: return "DimMismatch";
    case Error::Code::InvalidRank: return "InvalidRank";
    case Error::Code::InvalidConfig: return "InvalidConfig";
    case Error::Code::WrongVariant: return "WrongVariant";
    case Error::Code::ShapeMismatch: return "ShapeMismatch";
    case Error::Code::NonFiniteInput: return "NonFiniteInput";
    case Error::Code::CacheMismatch: return "CacheMismatch";
    case Error::Code::EmptySequence: return "EmptySequence";
    case Error::Code::InvalidDim: return "InvalidDim";
    case Error::Code::AllMasked: return "AllMasked";
    case Error::Code::NotOnSimplex: return "NotOnSimplex";
    case Error::Code::EmptyMask: return "EmptyMask";
    case Error::Code::ConfigParse: return "ConfigParse";
    case Error::Code::Io: return "Io";
    case Error::Code::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

namespace {

constexpr double kPivotRel = 1e-12;

double column_norm(const Matrix& m, std::size_t j, std::size_t from_row = 0) {
  double acc = 0.0;
  for (std::size_t i = from_row; i < m.rows; ++i) acc += m(i, j) * m(i, j);
  return std::sqrt(acc);
}

struct Householder {
  std::vector<std::vector<double>> vs;  // unit reflector per column, length rows-j
  std::vector<double> r_diag;
};

// Reduces work to R in place; vs[j] applies to rows j..end.
Householder householder_factor(Matrix& work, const std::vector<double>& orig_col_norms) {
  const std::size_t n = work.rows, k = work.cols;
  Householder h;
  h.vs.resize(k);
  h.r_diag.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t len = n - j;
    double norm_x = column_norm(work, j, j);
    if (norm_x < kPivotRel * orig_col_norms[j] || orig_col_norms[j] == 0.0)
      throw Error(Error::Code::RankDeficient, "qr_orthonormalize: pivot underflow at column " +
                                                  std::to_string(j));
    const double x0 = work(j, j);
    const double alpha = x0 >= 0.0 ? -norm_x : norm_x;
    std::vector<double> v(len);
    v[0] = x0 - alpha;
    for (std::size_t i = 1; i < len; ++i) v[i] = work(j + i, j);
    double vnorm = 0.0;
    for (double t : v) vnorm += t * t;
    vnorm = std::sqrt(vnorm);
    if (vnorm > 0.0)
      for (double& t : v) t /= vnorm;
    // apply H = I - 2 v v^T to work[j:, j:]
    for (std::size_t c = j; c < k; ++c) {
      double proj = 0.0;
      for (std::size_t i = 0; i < len; ++i) proj += v[i] * work(j + i, c);
      proj *= 2.0;
      for (std::size_t i = 0; i < len; ++i) work(j + i, c) -= proj * v[i];
    }
    h.r_diag[j] = work(j, j);
    h.vs[j] = std::move(v);
  }
  return h;
}

Matrix accumulate_thin_q(const Householder& h, std::size_t n, std::size_t k) {
  Matrix q(n, k);
  for (std::size_t j = 0; j < k; ++j) q(j, j) = 1.0;
  for (std::size_t j = k; j-- > 0;) {
    const auto& v = h.vs[j];
    const std::size_t len = v.size();
    for (std::size_t c = 0; c < k; ++c) {
      double proj = 0.0;
      for (std::size_t i = 0; i < len; ++i) proj += v[i] * q(j + i, c);
      proj *= 2.0;
      for (std::size_t i = 0; i < len; ++i) q(j + i, c) -= proj * v[i];
    }
  }
  return q;
}

}  // namespace

Matrix qr_orthonormalize(const Matrix& m) {
  if (m.rows < m.cols || m.cols == 0)
    throw Error(Error::Code::DimMismatch, "qr_orthonormalize: requires rows >= cols >= 1");
  std::vector<double> col_norms(m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) col_norms[j] = column_norm(m, j);
  Matrix work = m;
  Householder h = householder_factor(work, col_norms);
  Matrix q = accumulate_thin_q(h, m.rows, m.cols);
  // positive implicit R diagonal
  for (std::size_t j = 0; j < m.cols; ++j)
    if (h.r_diag[j] < 0.0)
      for (std::size_t i = 0; i < m.rows; ++i) q(i, j) = -q(i, j);
  return q;
}

Matrix orthonormalize_with_completion(const Matrix& m) {
  if (m.rows < m.cols || m.cols == 0)
    throw Error(Error::Code::DimMismatch, "orthonormalize_with_completion: requires rows >= cols >= 1");
  const std::size_t n = m.rows, k = m.cols;
  Matrix q(n, k);
  std::size_t next_canonical = 0;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = m(i, j);
    double orig = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    auto project_out = [&](std::vector<double>& w) {
      for (std::size_t c = 0; c < j; ++c) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += q(i, c) * w[i];
        for (std::size_t i = 0; i < n; ++i) w[i] -= proj * q(i, c);
      }
    };
    project_out(v);
    project_out(v);  // second MGS pass for orthogonality near machine precision
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (orig == 0.0 || norm <= 1e-12 * orig) {
      // dead direction: complete with the first canonical vector that survives
      for (; next_canonical < n; ++next_canonical) {
        std::fill(v.begin(), v.end(), 0.0);
        v[next_canonical] = 1.0;
        project_out(v);
        project_out(v);
        norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        if (norm > 0.5) {
          ++next_canonical;
          break;
        }
      }
      if (norm <= 0.5)
        throw Error(Error::Code::RankDeficient, "orthonormalize_with_completion: no completion found");
    }
    for (std::size_t i = 0; i < n; ++i) q(i, j) = v[i] / norm;
  }
  return q;
}

namespace {

struct Lu {
  Matrix lu;
  std::vector<std::size_t> perm;
  int sign = 1;
};

Lu lu_factor(const Matrix& a) {
  if (a.rows != a.cols || a.rows == 0)
    throw Error(Error::Code::DimMismatch, "solve: matrix must be square");
  const std::size_t n = a.rows;
  Lu f{a, std::vector<std::size_t>(n), 1};
  for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
  const double tol = kPivotRel * std::max(max_abs(a), 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t piv = j;
    double best = std::abs(f.lu(j, j));
    for (std::size_t i = j + 1; i < n; ++i) {
      const double v = std::abs(f.lu(i, j));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best < tol) throw Error(Error::Code::Singular, "solve: pivot below relative threshold");
    if (piv != j) {
      for (std::size_t c = 0; c < n; ++c) std::swap(f.lu(j, c), f.lu(piv, c));
      std::swap(f.perm[j], f.perm[piv]);
      f.sign = -f.sign;
    }
    const double inv_piv = 1.0 / f.lu(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      const double mult = f.lu(i, j) * inv_piv;
      f.lu(i, j) = mult;
      for (std::size_t c = j + 1; c < n; ++c) f.lu(i, c) -= mult * f.lu(j, c);
    }
  }
  return f;
}

}  // namespace

Matrix solve(const Matrix& a, const Matrix& b) {
  if (b.rows != a.rows) throw Error(Error::Code::DimMismatch, "solve: rhs row count mismatch");
  Lu f = lu_factor(a);
  const std::size_t n = a.rows, m = b.cols;
  Matrix x(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c) x(i, c) = b(f.perm[i], c);
  // forward: L y = P b (unit diagonal)
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t k = 0; k < i; ++k) {
      const double l = f.lu(i, k);
      if (l == 0.0) continue;
      for (std::size_t c = 0; c < m; ++c) x(i, c) -= l * x(k, c);
    }
  // back: U x = y
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) {
      const double u = f.lu(i, k);
      if (u == 0.0) continue;
      for (std::size_t c = 0; c < m; ++c) x(i, c) -= u * x(k, c);
    }
    const double inv = 1.0 / f.lu(i, i);
    for (std::size_t c = 0; c < m; ++c) x(i, c) *= inv;
  }
  return x;
}

double determinant(const Matrix& a) {
  Lu f;
  try {
    f = lu_factor(a);
  } catch (const Error& e) {
    if (e.code() == Error::Code::Singular) return 0.0;
    throw;
  }
  double det = f.sign;
  for (std::size_t i = 0; i < a.rows; ++i) det *= f.lu(i, i);
  return det;
}

namespace {

// One-sided Jacobi SVD of a tall matrix (rows >= cols): M = U diag(sigma) V^T.
// High relative accuracy even for tiny singular values; V is a product of
// plane rotations and hence orthogonal to machine precision.
struct JacobiSvd {
  Matrix u;  // rows x cols
  std::vector<double> sigma;
  Matrix v;  // cols x cols
};

JacobiSvd one_sided_jacobi(Matrix m) {
  const std::size_t n = m.rows, k = m.cols;
  Matrix v = Matrix::identity(k);
  const double tol = 1e-15;
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double mp = m(i, p), mq = m(i, q);
          app += mp * mp;
          aqq += mq * mq;
          apq += mp * mq;
        }
        if (app == 0.0 || aqq == 0.0) continue;
        if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double mp = m(i, p), mq = m(i, q);
          m(i, p) = c * mp - s * mq;
          m(i, q) = s * mp + c * mq;
        }
        for (std::size_t i = 0; i < k; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> norms(k);
  for (std::size_t j = 0; j < k; ++j) norms[j] = column_norm(m, j);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
  JacobiSvd out;
  out.u = Matrix(n, k);
  out.v = Matrix(k, k);
  out.sigma.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = norms[src];
    for (std::size_t i = 0; i < k; ++i) out.v(i, j) = v(i, src);
    if (norms[src] > 0.0) {
      for (std::size_t i = 0; i < n; ++i) out.u(i, j) = m(i, src) / norms[src];
    }
  }
  // complete exactly-zero directions so U keeps orthonormal columns
  std::size_t next_canonical = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (out.sigma[j] > 0.0) continue;
    std::vector<double> w(n);
    double norm = 0.0;
    for (; next_canonical < n; ++next_canonical) {
      std::fill(w.begin(), w.end(), 0.0);
      w[next_canonical] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t c = 0; c < k; ++c) {
          if (c == j || (out.sigma[c] == 0.0 && c > j)) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < n; ++i) proj += out.u(i, c) * w[i];
          for (std::size_t i = 0; i < n; ++i) w[i] -= proj * out.u(i, c);
        }
      norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
      if (norm > 0.5) {
        ++next_canonical;
        break;
      }
    }
    for (std::size_t i = 0; i < n; ++i) out.u(i, j) = w[i] / norm;
  }
  return out;
}

}  // namespace

Svd randomized_svd(const Matrix& w, std::size_t target_rank, std::size_t power_iters,
                   std::uint64_t rng_seed) {
  const std::size_t q = target_rank;
  if (q == 0 || q > std::min(w.rows, w.cols))
    throw Error(Error::Code::InvalidRank, "randomized_svd: target rank out of range");
  Rng rng(rng_seed);
  Matrix omega = rng.gaussian_matrix(w.cols, q);
  Matrix range = orthonormalize_with_completion(multiply(w, omega));
  for (std::size_t it = 0; it < power_iters; ++it) {
    Matrix z = orthonormalize_with_completion(multiply_at_b(w, range));
    range = orthonormalize_with_completion(multiply(w, z));
  }
  Matrix b = multiply_at_b(range, w);  // q x cols
  JacobiSvd small = one_sided_jacobi(transpose(b));
  // b^T = U_b S V_b^T  =>  w ~ (range V_b) S U_b^T
  Svd out;
  out.u = multiply(range, small.v);
  out.v = std::move(small.u);
  out.sigma = std::move(small.sigma);
  // sign convention: largest-magnitude entry of each U column positive
  for (std::size_t j = 0; j < q; ++j) {
    std::size_t imax = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < out.u.rows; ++i) {
      const double v = std::abs(out.u(i, j));
      if (v > best) {
        best = v;
        imax = i;
      }
    }
    if (out.u(imax, j) < 0.0) {
      for (std::size_t i = 0; i < out.u.rows; ++i) out.u(i, j) = -out.u(i, j);
      for (std::size_t i = 0; i < out.v.rows; ++i) out.v(i, j) = -out.v(i, j);
    }
  }
  return out;
}

Matrix gram(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw Error(Error::Code::DimMismatch, "gram: row counts differ");
  return multiply_at_b(a, b);
}

}  // namespace orthomoe
