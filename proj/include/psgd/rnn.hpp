#pragma once

#include <cstdint>
#include <vector>

#include "psgd/linalg.hpp"

namespace psgd {

struct RnnDims {
  int n_u = 1;  // input dimension
  int n_x = 1;  // hidden dimension
  int n_y = 1;  // output dimension

  int w1_cols() const { return n_u + n_x + 1; }
  int w2_cols() const { return n_x + 1; }

  void validate() const {
    if (n_u < 1 || n_x < 1 || n_y < 1) throw DimensionError("RnnDims: all dimensions must be >= 1");
  }
};

// The network
//   x(t) = tanh(W1 [u(t); x(t-1); 1]),  y(t) = W2 [x(t); 1],  x(0) = 0.
// The last column of each weight matrix is the bias.
struct RnnParams {
  RnnDims dims;
  Matrix W1;  // n_x x (n_u + n_x + 1)
  Matrix W2;  // n_y x (n_x + 1)
};

enum class LossKind { Mse, CrossEntropy };

// A mini-batch of equal-length sequences, stored per time step with one
// column per sequence. Targets are dense vectors for MSE and class indices
// for cross entropy; both exist only at steps selected by loss_mask.
// eval_mask marks the subset of steps scored by task success metrics.
struct SequenceBatch {
  LossKind loss_kind = LossKind::Mse;
  int T = 0;
  int batch = 0;
  int n_u = 0;
  int n_y = 0;
  std::vector<Matrix> inputs;             // T entries, n_u x batch
  std::vector<Matrix> targets;            // MSE: n_y x batch at masked steps, else empty
  std::vector<Eigen::VectorXi> classes;   // CE: batch entries at masked steps, else empty
  std::vector<std::uint8_t> loss_mask;    // T entries
  std::vector<std::uint8_t> eval_mask;    // T entries

  int masked_count() const {
    int m = 0;
    for (auto b : loss_mask) m += b ? 1 : 0;
    return m;
  }
};

struct ForwardTrace {
  std::vector<Matrix> hidden;   // T+1 entries, n_x x batch; hidden[0] = 0
  std::vector<Matrix> outputs;  // T entries, n_y x batch
};

struct RnnGrads {
  Matrix dW1;
  Matrix dW2;
  double loss = 0.0;
};

namespace detail {

inline void check_batch(const RnnParams& p, const SequenceBatch& b) {
  if (b.T <= 0 || b.batch <= 0) throw DimensionError("SequenceBatch: empty batch");
  if (b.n_u != p.dims.n_u) throw DimensionError("SequenceBatch: input dimension mismatch");
  if (static_cast<int>(b.inputs.size()) != b.T) throw DimensionError("SequenceBatch: inputs/T mismatch");
  if (static_cast<int>(b.loss_mask.size()) != b.T) throw DimensionError("SequenceBatch: mask/T mismatch");
  for (const auto& u : b.inputs)
    if (u.rows() != b.n_u || u.cols() != b.batch) throw DimensionError("SequenceBatch: input shape mismatch");
}

inline Matrix activation(const Matrix& a) { return a.array().tanh().matrix(); }

// dL/dY at a masked step, already scaled by 1/(batch * masked_count).
// For cross entropy this is softmax(y) - onehot(class); its columns sum
// to zero, which is what keeps the W2 gradient zero-column-sum.
inline Matrix output_grad(const SequenceBatch& b, const Matrix& y, int t, double scale, double* loss_acc) {
  if (b.loss_kind == LossKind::Mse) {
    const Matrix& tgt = b.targets[static_cast<std::size_t>(t)];
    if (tgt.rows() != y.rows() || tgt.cols() != y.cols())
      throw DimensionError("SequenceBatch: target shape mismatch");
    Matrix d = y - tgt;
    if (loss_acc) *loss_acc += 0.5 * scale * d.squaredNorm();
    return scale * d;
  }
  const auto& cls = b.classes[static_cast<std::size_t>(t)];
  if (cls.size() != y.cols()) throw DimensionError("SequenceBatch: class vector size mismatch");
  Matrix d(y.rows(), y.cols());
  for (Index col = 0; col < y.cols(); ++col) {
    const double m = y.col(col).maxCoeff();
    Eigen::ArrayXd e = (y.col(col).array() - m).exp();
    const double z = e.sum();
    const int c = cls(col);
    if (c < 0 || c >= y.rows()) throw ContractViolation("cross-entropy class out of range");
    if (loss_acc) *loss_acc += scale * (std::log(z) - (y(c, col) - m));
    d.col(col) = (e / z).matrix() * scale;
    d(c, col) -= scale;
  }
  return d;
}

}  // namespace detail

// Weights are drawn in a fixed order: W1 input block, W1 recurrent block,
// W2 output block. The recurrent block is Haar orthogonal so that the
// initial state transition neither explodes nor dies; everything else is
// N(0, 0.1^2) and biases start at zero.
inline RnnParams init_params(const RnnDims& dims, Rng& rng) {
  dims.validate();
  RnnParams p;
  p.dims = dims;
  p.W1.setZero(dims.n_x, dims.w1_cols());
  p.W2.setZero(dims.n_y, dims.w2_cols());
  p.W1.leftCols(dims.n_u) = gaussian_matrix(dims.n_x, dims.n_u, 0.1, rng);
  p.W1.middleCols(dims.n_u, dims.n_x) = random_orthogonal(dims.n_x, rng);
  p.W2.leftCols(dims.n_x) = gaussian_matrix(dims.n_y, dims.n_x, 0.1, rng);
  return p;
}

inline ForwardTrace forward(const RnnParams& p, const SequenceBatch& b) {
  detail::check_batch(p, b);
  const int nx = p.dims.n_x;
  const int nu = p.dims.n_u;
  ForwardTrace tr;
  tr.hidden.reserve(static_cast<std::size_t>(b.T) + 1);
  tr.outputs.reserve(static_cast<std::size_t>(b.T));
  tr.hidden.emplace_back(Matrix::Zero(nx, b.batch));
  for (int t = 0; t < b.T; ++t) {
    Matrix a = p.W1.leftCols(nu) * b.inputs[static_cast<std::size_t>(t)];
    a.noalias() += p.W1.middleCols(nu, nx) * tr.hidden.back();
    a.colwise() += p.W1.col(nu + nx);
    tr.hidden.emplace_back(detail::activation(a));
    Matrix y = p.W2.leftCols(nx) * tr.hidden.back();
    y.colwise() += p.W2.col(nx);
    tr.outputs.emplace_back(std::move(y));
  }
  return tr;
}

// Mean over masked steps and batch entries; MSE terms are 0.5 |y - t|^2,
// cross entropy terms are -log softmax(y)[class].
inline double loss(const ForwardTrace& tr, const SequenceBatch& b) {
  const int m = b.masked_count();
  if (m == 0) throw ContractViolation("loss: mask selects no step");
  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(b.batch));
  double acc = 0.0;
  for (int t = 0; t < b.T; ++t) {
    if (!b.loss_mask[static_cast<std::size_t>(t)]) continue;
    detail::output_grad(b, tr.outputs[static_cast<std::size_t>(t)], t, scale, &acc);
  }
  return acc;
}

// Exact gradient of loss() by backpropagation through time, averaged the
// same way the loss is. Also reports the loss of the same forward pass.
inline RnnGrads bptt_grad(const RnnParams& p, const SequenceBatch& b) {
  detail::check_batch(p, b);
  const int m = b.masked_count();
  if (m == 0) throw ContractViolation("bptt_grad: mask selects no step");
  const int nx = p.dims.n_x;
  const int nu = p.dims.n_u;
  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(b.batch));

  ForwardTrace tr = forward(p, b);

  RnnGrads g;
  g.dW1.setZero(p.W1.rows(), p.W1.cols());
  g.dW2.setZero(p.W2.rows(), p.W2.cols());
  double loss_acc = 0.0;

  Matrix dx = Matrix::Zero(nx, b.batch);  // dL/dx(t), accumulated backwards
  for (int t = b.T - 1; t >= 0; --t) {
    const Matrix& x = tr.hidden[static_cast<std::size_t>(t) + 1];
    if (b.loss_mask[static_cast<std::size_t>(t)]) {
      Matrix dy = detail::output_grad(b, tr.outputs[static_cast<std::size_t>(t)], t, scale, &loss_acc);
      g.dW2.leftCols(nx).noalias() += dy * x.transpose();
      g.dW2.col(nx) += dy.rowwise().sum();
      dx.noalias() += p.W2.leftCols(nx).transpose() * dy;
    }
    const Matrix da = dx.cwiseProduct((1.0 - x.array().square()).matrix());
    g.dW1.leftCols(nu).noalias() += da * b.inputs[static_cast<std::size_t>(t)].transpose();
    g.dW1.middleCols(nu, nx).noalias() += da * tr.hidden[static_cast<std::size_t>(t)].transpose();
    g.dW1.col(nu + nx) += da.rowwise().sum();
    dx.noalias() = p.W1.middleCols(nu, nx).transpose() * da;
  }
  g.loss = loss_acc;
  return g;
}

// Orthogonal projection onto matrices whose columns sum to zero; removes
// each column's mean. Idempotent and norm non-increasing.
inline Matrix project_zero_column_sum(Matrix m) {
  m.rowwise() -= m.colwise().mean();
  return m;
}

}  // namespace psgd
