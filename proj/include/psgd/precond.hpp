#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "psgd/linalg.hpp"

namespace psgd {

// Positive-definite gradient preconditioners estimated online from
// perturbation pairs (delta_theta, delta_g). A preconditioner P minimizes
//
//   E[ dg' P dg + dtheta' P^{-1} dtheta ]
//
// over SPD matrices, which scale-matches P dg to dtheta; for noiseless
// linear pairs dg = H dtheta the minimizer is |H|^{-1}. P is never stored
// directly: it is kept as P = Q' Q with Q upper triangular and positive
// diagonal, so P stays SPD by construction. Updates are relative-gradient
// steps on Q; docs/preconditioner.md derives the formulas.

enum class PrecondKind { None, Dense, Kron };

struct LayerShape {
  Index rows = 0;
  Index cols = 0;
  bool operator==(const LayerShape&) const = default;
};

struct GradPair {
  std::vector<Matrix> delta_theta;
  std::vector<Matrix> delta_g;
};

// Relative-gradient steps are normalized by the largest entry of the
// relative gradient; the floor keeps the division sane at exact optima.
inline constexpr double kNormalizerFloor = 0x1p-52;
inline constexpr int kMaxStepHalvings = 10;

// ---------------------------------------------------------------------------
// Dense form: one factor over the whole flattened parameter vector.
// ---------------------------------------------------------------------------

struct DensePreconditioner {
  std::vector<LayerShape> shapes;
  Matrix Q;  // n_theta x n_theta, upper triangular, positive diagonal
};

inline DensePreconditioner dense_identity(const std::vector<LayerShape>& shapes) {
  Index n = 0;
  for (const auto& s : shapes) {
    if (s.rows < 1 || s.cols < 1) throw DimensionError("dense_identity: bad layer shape");
    n += s.rows * s.cols;
  }
  return DensePreconditioner{shapes, Matrix::Identity(n, n)};
}

namespace detail {

// Normalizer for a relative-gradient step. The absolute floor guards the
// division at exact optima; the scale-relative part keeps the step bounded
// by O(step) even when the two product terms cancel almost completely, in
// which case the computed gradient is rounding residue of magnitude
// ulp(scale) rather than signal.
inline double step_normalizer(double g_max, double product_scale) {
  return std::max(g_max, kNormalizerFloor * std::max(1.0, product_scale));
}

}  // namespace detail

// One relative-gradient descent step on Q from a single pair. With
// a = Q dg and b = Q^{-T} dtheta the relative gradient of the criterion is
// G = 2 (a a' - b b'); keeping its upper-triangular part preserves the
// factor's structure and the step
//
//   Q <- Q - (step / max(|G|, floor)) upper(G) Q
//
// costs O(n^2) through suffix sums of the rank-2 structure. The two
// product terms are materialized before subtracting so that an identical
// pair (a == b) gives an exactly zero update under FMA contraction too.
// The diagonal scales by 1 - eta G_ii, so it stays positive for any
// step < 1; if a larger step would cross zero the step is halved, and
// after kMaxStepHalvings the update is skipped (returns false).
inline bool update_dense(DensePreconditioner& pc, const Vector& dtheta, const Vector& dg, double step) {
  const Index n = pc.Q.rows();
  if (dtheta.size() != n || dg.size() != n) throw DimensionError("update_dense: pair size mismatch");
  if (!(step > 0.0)) throw ContractViolation("update_dense: step must be > 0");

  const Vector a = pc.Q.triangularView<Eigen::Upper>() * dg;
  const Vector b = tri_solve_upper_transposed(pc.Q, dtheta);

  double g_max = 0.0;
  Vector col_a(n), col_b(n);
  for (Index j = 0; j < n; ++j) {
    col_a.head(j + 1) = a.head(j + 1) * a(j);
    col_b.head(j + 1) = b.head(j + 1) * b(j);
    const double col_max = (col_a.head(j + 1) - col_b.head(j + 1)).cwiseAbs().maxCoeff();
    if (col_max > g_max) g_max = col_max;
  }
  g_max *= 2.0;
  const double a_inf = a.cwiseAbs().maxCoeff();
  const double b_inf = b.cwiseAbs().maxCoeff();
  const double scale = 2.0 * std::max(a_inf * a_inf, b_inf * b_inf);

  double eta = step / detail::step_normalizer(g_max, scale);
  const auto diag_safe = [&](double e) {
    for (Index i = 0; i < n; ++i)
      if (!(1.0 - 2.0 * e * (a(i) * a(i) - b(i) * b(i)) > 0.0)) return false;
    return true;
  };
  int halvings = 0;
  while (!diag_safe(eta)) {
    if (++halvings > kMaxStepHalvings) return false;
    eta *= 0.5;
  }

  // In-place bottom-up sweep: row i is read into the suffix sums before it
  // is overwritten, and rows below it are never read again.
  Eigen::RowVectorXd sum_a = Eigen::RowVectorXd::Zero(n);
  Eigen::RowVectorXd sum_b = Eigen::RowVectorXd::Zero(n);
  Eigen::RowVectorXd row_a(n), row_b(n);
  for (Index i = n - 1; i >= 0; --i) {
    const Index len = n - i;
    sum_a.tail(len) += a(i) * pc.Q.row(i).tail(len);
    sum_b.tail(len) += b(i) * pc.Q.row(i).tail(len);
    row_a.tail(len) = a(i) * sum_a.tail(len);
    row_b.tail(len) = b(i) * sum_b.tail(len);
    pc.Q.row(i).tail(len) -= (2.0 * eta) * (row_a.tail(len) - row_b.tail(len));
  }
  return true;
}

// ---------------------------------------------------------------------------
// Kronecker form: per weight matrix W (r x c) two factors Q_left (r x r)
// and Q_right (c x c); the layer's preconditioner acts as
// P_left G P_right = Q_left' Q_left G Q_right' Q_right, equal to
// (P_right (x) P_left) vec(G) under column-major vec. The global P is the
// direct sum of the per-layer Kronecker blocks.
// ---------------------------------------------------------------------------

struct KronLayer {
  Matrix q_left;
  Matrix q_right;
};

struct KronPreconditioner {
  std::vector<KronLayer> layers;
};

inline KronPreconditioner kron_identity(const std::vector<LayerShape>& shapes) {
  KronPreconditioner pc;
  pc.layers.reserve(shapes.size());
  for (const auto& s : shapes) {
    if (s.rows < 1 || s.cols < 1) throw DimensionError("kron_identity: bad layer shape");
    pc.layers.push_back({Matrix::Identity(s.rows, s.rows), Matrix::Identity(s.cols, s.cols)});
  }
  return pc;
}

namespace detail {

// Q <- Q - eta upper(G) Q with the same normalizer and diagonal safeguard
// as the dense update. G is the (symmetric) relative gradient for this
// factor, factor 2 already included; product_scale is the magnitude of the
// two terms G was formed from.
inline bool factor_step(Matrix& q, const Matrix& g_rel, double product_scale, double step) {
  const Index n = q.rows();
  const double g_max = g_rel.cwiseAbs().maxCoeff();
  double eta = step / step_normalizer(g_max, product_scale);
  const auto diag_safe = [&](double e) {
    for (Index i = 0; i < n; ++i)
      if (!(1.0 - e * g_rel(i, i) > 0.0)) return false;
    return true;
  };
  int halvings = 0;
  while (!diag_safe(eta)) {
    if (++halvings > kMaxStepHalvings) return false;
    eta *= 0.5;
  }
  const Matrix dq = g_rel.triangularView<Eigen::Upper>() * q;
  q -= eta * dq;
  return true;
}

// Only the product of the two factor scales matters: (c Ql, Qr / c) give
// the same P. Rebalancing their magnitudes after each update keeps long
// runs away from overflow/underflow without changing P.
inline void balance_factors(KronLayer& layer) {
  const double ml = layer.q_left.cwiseAbs().maxCoeff();
  const double mr = layer.q_right.cwiseAbs().maxCoeff();
  if (!(ml > 0.0) || !(mr > 0.0)) return;
  const double s = std::sqrt(mr / ml);
  if (!(s > 0.0) || !std::isfinite(s)) return;
  layer.q_left *= s;
  layer.q_right /= s;
}

}  // namespace detail

// Relative-gradient step for one layer's factor pair from the pair
// (d_theta, d_g) of that layer. With A = Ql d_g Qr' and B = Ql^{-T} d_theta
// Qr^{-1} the factor gradients are 2(A A' - B B') for Ql and
// 2(A' A - B' B) for Qr; both factors step from the same A, B.
inline bool update_kron(KronPreconditioner& pc, std::size_t layer, const Matrix& d_g,
                        const Matrix& d_theta, double step) {
  if (layer >= pc.layers.size()) throw DimensionError("update_kron: layer index out of range");
  if (!(step > 0.0)) throw ContractViolation("update_kron: step must be > 0");
  KronLayer& L = pc.layers[layer];
  const Index r = L.q_left.rows();
  const Index c = L.q_right.rows();
  if (d_g.rows() != r || d_g.cols() != c || d_theta.rows() != r || d_theta.cols() != c)
    throw DimensionError("update_kron: pair shape mismatch");

  Matrix a = L.q_left.triangularView<Eigen::Upper>() * d_g;
  a = a * L.q_right.transpose();
  Matrix b = tri_solve_upper_transposed_mat(L.q_left, d_theta);
  b = tri_solve_right_upper(L.q_right, b);

  const Matrix aat = a * a.transpose();
  const Matrix bbt = b * b.transpose();
  const Matrix ata = a.transpose() * a;
  const Matrix btb = b.transpose() * b;
  const double scale_left = 2.0 * std::max(aat.cwiseAbs().maxCoeff(), bbt.cwiseAbs().maxCoeff());
  const double scale_right = 2.0 * std::max(ata.cwiseAbs().maxCoeff(), btb.cwiseAbs().maxCoeff());
  const Matrix g_left = 2.0 * (aat - bbt);
  const Matrix g_right = 2.0 * (ata - btb);

  const bool ok_left = detail::factor_step(L.q_left, g_left, scale_left, step);
  const bool ok_right = detail::factor_step(L.q_right, g_right, scale_right, step);
  detail::balance_factors(L);
  return ok_left && ok_right;
}

// ---------------------------------------------------------------------------
// Unified wrapper used by the optimizer.
// ---------------------------------------------------------------------------

class Preconditioner {
 public:
  Preconditioner() = default;

  static Preconditioner identity(PrecondKind kind, const std::vector<LayerShape>& shapes) {
    Preconditioner p;
    p.kind_ = kind;
    p.shapes_ = shapes;
    switch (kind) {
      case PrecondKind::None:
        break;
      case PrecondKind::Dense:
        p.dense_ = dense_identity(shapes);
        break;
      case PrecondKind::Kron:
        p.kron_ = kron_identity(shapes);
        break;
    }
    return p;
  }

  PrecondKind kind() const { return kind_; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  const DensePreconditioner& dense() const { return dense_; }
  const KronPreconditioner& kron() const { return kron_; }

  std::vector<Matrix> apply(const std::vector<Matrix>& g) const {
    check_layers(g);
    switch (kind_) {
      case PrecondKind::None:
        return g;
      case PrecondKind::Dense: {
        const Vector v = flatten(g);
        const Vector w = dense_.Q.triangularView<Eigen::Upper>() * v;
        const Vector out = dense_.Q.triangularView<Eigen::Upper>().transpose() * w;
        std::vector<std::pair<Index, Index>> sh;
        sh.reserve(shapes_.size());
        for (const auto& s : shapes_) sh.emplace_back(s.rows, s.cols);
        return unflatten(out, sh);
      }
      case PrecondKind::Kron: {
        std::vector<Matrix> out;
        out.reserve(g.size());
        for (std::size_t l = 0; l < g.size(); ++l) {
          const KronLayer& L = kron_.layers[l];
          // P_left G P_right grouped as Ql' (Ql G Qr') Qr.
          Matrix m = L.q_left * g[l] * L.q_right.transpose();
          out.emplace_back(L.q_left.transpose() * m * L.q_right);
        }
        return out;
      }
    }
    return g;
  }

  // Returns false when the positive-diagonal safeguard had to skip the
  // update (or part of it for the Kronecker form).
  bool update(const std::vector<Matrix>& d_theta, const std::vector<Matrix>& d_g, double step) {
    check_layers(d_theta);
    check_layers(d_g);
    switch (kind_) {
      case PrecondKind::None:
        return true;
      case PrecondKind::Dense:
        return update_dense(dense_, flatten(d_theta), flatten(d_g), step);
      case PrecondKind::Kron: {
        bool ok = true;
        for (std::size_t l = 0; l < d_g.size(); ++l)
          ok = update_kron(kron_, l, d_g[l], d_theta[l], step) && ok;
        return ok;
      }
    }
    return true;
  }

  DensePreconditioner& mutable_dense() { return dense_; }
  KronPreconditioner& mutable_kron() { return kron_; }

 private:
  void check_layers(const std::vector<Matrix>& g) const {
    if (g.size() != shapes_.size()) throw DimensionError("preconditioner: layer count mismatch");
    for (std::size_t l = 0; l < g.size(); ++l)
      if (g[l].rows() != shapes_[l].rows || g[l].cols() != shapes_[l].cols)
        throw DimensionError("preconditioner: layer shape mismatch");
  }

  PrecondKind kind_ = PrecondKind::None;
  std::vector<LayerShape> shapes_;
  DensePreconditioner dense_;
  KronPreconditioner kron_;
};

// Sample mean of dg' P dg + dtheta' P^{-1} dtheta over the pairs. Through
// the factors the two terms are |Q dg|^2 and |Q^{-T} dtheta|^2 per block.
inline double criterion_value(const Preconditioner& pc, const std::vector<GradPair>& pairs) {
  if (pairs.empty()) throw ContractViolation("criterion_value: no pairs");
  double acc = 0.0;
  for (const auto& pair : pairs) {
    switch (pc.kind()) {
      case PrecondKind::None: {
        acc += flatten(pair.delta_g).squaredNorm() + flatten(pair.delta_theta).squaredNorm();
        break;
      }
      case PrecondKind::Dense: {
        const Vector dg = flatten(pair.delta_g);
        const Vector dt = flatten(pair.delta_theta);
        acc += (pc.dense().Q.triangularView<Eigen::Upper>() * dg).squaredNorm();
        acc += tri_solve_upper_transposed(pc.dense().Q, dt).squaredNorm();
        break;
      }
      case PrecondKind::Kron: {
        for (std::size_t l = 0; l < pair.delta_g.size(); ++l) {
          const KronLayer& L = pc.kron().layers[l];
          Matrix a = L.q_left.triangularView<Eigen::Upper>() * pair.delta_g[l];
          a = a * L.q_right.transpose();
          Matrix b = tri_solve_upper_transposed_mat(L.q_left, pair.delta_theta[l]);
          b = tri_solve_right_upper(L.q_right, b);
          acc += a.squaredNorm() + b.squaredNorm();
        }
        break;
      }
    }
  }
  return acc / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Checkpoint format, versioned by a magic string. Text, one factor per
// block, entries row-major with full round-trip precision, so checkpoints
// restore factors bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr const char* kPrecondMagic = "PSGD-PC-1";

namespace detail {

inline void write_double(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

inline void write_factor(std::ostream& os, const Matrix& q) {
  os << "factor " << q.rows() << ' ' << q.cols() << '\n';
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index j = 0; j < q.cols(); ++j) {
      if (j) os << ' ';
      write_double(os, q(i, j));
    }
    os << '\n';
  }
}

inline Matrix read_factor(std::istream& is) {
  std::string tag;
  Index r = 0, c = 0;
  if (!(is >> tag >> r >> c) || tag != "factor" || r < 1 || c < 1)
    throw IoError("preconditioner checkpoint: bad factor header");
  Matrix q(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j)
      if (!(is >> q(i, j))) throw IoError("preconditioner checkpoint: truncated factor");
  if (!all_finite(q)) throw IoError("preconditioner checkpoint: non-finite factor entry");
  check_upper_factor(q);
  return q;
}

}  // namespace detail

inline void save_preconditioner(std::ostream& os, const Preconditioner& pc) {
  os << kPrecondMagic << '\n';
  const char* kind = pc.kind() == PrecondKind::Dense  ? "dense"
                     : pc.kind() == PrecondKind::Kron ? "kron"
                                                      : "none";
  os << "kind " << kind << '\n';
  os << "layers " << pc.shapes().size() << '\n';
  for (const auto& s : pc.shapes()) os << "shape " << s.rows << ' ' << s.cols << '\n';
  if (pc.kind() == PrecondKind::Dense) {
    detail::write_factor(os, pc.dense().Q);
  } else if (pc.kind() == PrecondKind::Kron) {
    for (const auto& layer : pc.kron().layers) {
      detail::write_factor(os, layer.q_left);
      detail::write_factor(os, layer.q_right);
    }
  }
  if (!os) throw IoError("preconditioner checkpoint: write failed");
}

inline Preconditioner load_preconditioner(std::istream& is) {
  std::string magic;
  if (!(is >> magic) || magic != kPrecondMagic)
    throw IoError("preconditioner checkpoint: bad magic string");
  std::string tag, kind_name;
  if (!(is >> tag >> kind_name) || tag != "kind")
    throw IoError("preconditioner checkpoint: bad kind line");
  PrecondKind kind;
  if (kind_name == "dense")
    kind = PrecondKind::Dense;
  else if (kind_name == "kron")
    kind = PrecondKind::Kron;
  else if (kind_name == "none")
    kind = PrecondKind::None;
  else
    throw IoError("preconditioner checkpoint: unknown kind '" + kind_name + "'");
  std::size_t n_layers = 0;
  if (!(is >> tag >> n_layers) || tag != "layers")
    throw IoError("preconditioner checkpoint: bad layer count");
  std::vector<LayerShape> shapes(n_layers);
  for (auto& s : shapes) {
    if (!(is >> tag >> s.rows >> s.cols) || tag != "shape" || s.rows < 1 || s.cols < 1)
      throw IoError("preconditioner checkpoint: bad shape line");
  }
  Preconditioner pc = Preconditioner::identity(kind, shapes);
  if (kind == PrecondKind::Dense) {
    Matrix q = detail::read_factor(is);
    if (q.rows() != pc.dense().Q.rows())
      throw IoError("preconditioner checkpoint: dense factor size mismatch");
    pc.mutable_dense().Q = std::move(q);
  } else if (kind == PrecondKind::Kron) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      Matrix ql = detail::read_factor(is);
      Matrix qr = detail::read_factor(is);
      if (ql.rows() != shapes[l].rows || qr.rows() != shapes[l].cols)
        throw IoError("preconditioner checkpoint: factor size mismatch");
      pc.mutable_kron().layers[l] = {std::move(ql), std::move(qr)};
    }
  }
  return pc;
}

}  // namespace psgd
