#pragma once

#include <Eigen/Dense>
#include <vector>

#include "psgd/errors.hpp"
#include "psgd/rng.hpp"

namespace psgd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// i.i.d. N(0, std^2) entries, filled in column-major order so that the
// stream of draws is independent of how callers slice the result.
inline Matrix gaussian_matrix(Index rows, Index cols, double std, Rng& rng) {
  if (rows < 0 || cols < 0) throw DimensionError("gaussian_matrix: negative shape");
  if (std < 0.0) throw DimensionError("gaussian_matrix: std must be >= 0");
  Matrix m(rows, cols);
  if (std == 0.0) {
    m.setZero();
    return m;
  }
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = std * rng.normal();
  return m;
}

// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
// each Q column flipped to make the matching R diagonal entry positive.
// Without the sign fix the distribution would depend on the QR routine.
inline Matrix random_orthogonal(Index n, Rng& rng) {
  if (n < 1) throw DimensionError("random_orthogonal: n must be >= 1");
  Matrix g = gaussian_matrix(n, n, 1.0, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& qr_packed = qr.matrixQR();
  for (Index j = 0; j < n; ++j)
    if (qr_packed(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline void check_upper_factor(const Matrix& u) {
  if (u.rows() != u.cols()) throw DimensionError("triangular factor must be square");
  for (Index i = 0; i < u.rows(); ++i)
    if (!(u(i, i) > 0.0)) throw SingularFactorError("triangular factor has non-positive diagonal");
}

// Solve U x = b for upper-triangular U with positive diagonal.
inline Vector tri_solve_upper(const Matrix& u, const Vector& b) {
  check_upper_factor(u);
  if (u.cols() != b.size()) throw DimensionError("tri_solve_upper: size mismatch");
  return u.triangularView<Eigen::Upper>().solve(b);
}

// Solve U^T x = b (forward substitution on the transposed factor).
inline Vector tri_solve_upper_transposed(const Matrix& u, const Vector& b) {
  check_upper_factor(u);
  if (u.cols() != b.size()) throw DimensionError("tri_solve_upper_transposed: size mismatch");
  return u.triangularView<Eigen::Upper>().transpose().solve(b);
}

// Solve U^T X = B column-wise.
inline Matrix tri_solve_upper_transposed_mat(const Matrix& u, const Matrix& b) {
  check_upper_factor(u);
  if (u.cols() != b.rows()) throw DimensionError("tri_solve_upper_transposed_mat: size mismatch");
  return u.triangularView<Eigen::Upper>().transpose().solve(b);
}

// Solve X U = B, i.e. right-divide by an upper-triangular factor.
inline Matrix tri_solve_right_upper(const Matrix& u, const Matrix& b) {
  check_upper_factor(u);
  if (u.rows() != b.cols()) throw DimensionError("tri_solve_right_upper: size mismatch");
  return u.triangularView<Eigen::Upper>().transpose().solve(b.transpose()).transpose();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Column-major flattening of a list of matrices into one coefficient vector.
// The same convention is used everywhere a parameter list is vectorized.
inline Index total_size(const std::vector<Matrix>& ms) {
  Index n = 0;
  for (const auto& m : ms) n += m.size();
  return n;
}

inline Vector flatten(const std::vector<Matrix>& ms) {
  Vector v(total_size(ms));
  Index at = 0;
  for (const auto& m : ms) {
    v.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    at += m.size();
  }
  return v;
}

inline std::vector<Matrix> unflatten(const Vector& v, const std::vector<std::pair<Index, Index>>& shapes) {
  std::vector<Matrix> out;
  out.reserve(shapes.size());
  Index at = 0;
  for (const auto& [r, c] : shapes) {
    if (at + r * c > v.size()) throw DimensionError("unflatten: vector too short");
    out.emplace_back(Eigen::Map<const Matrix>(v.data() + at, r, c));
    at += r * c;
  }
  if (at != v.size()) throw DimensionError("unflatten: vector too long");
  return out;
}

}  // namespace psgd
