#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "psgd/precond.hpp"
#include "psgd/rnn.hpp"
#include "psgd/tasks.hpp"

namespace psgd {

struct PsgdConfig {
  double mu = 0.01;             // normalized step size, in (0, 1)
  double precond_step = 0.01;   // factor learning rate
  double perturbation_std = 0x1p-26;  // sqrt of the double-precision eps
  int batch_size = 100;
  PrecondKind precond_kind = PrecondKind::Kron;

  void validate() const {
    if (!(mu > 0.0 && mu < 1.0)) throw ContractViolation("PsgdConfig: mu must be in (0,1)");
    if (!(perturbation_std > 0.0)) throw ContractViolation("PsgdConfig: perturbation_std must be > 0");
    if (batch_size < 1) throw ContractViolation("PsgdConfig: batch_size must be >= 1");
  }
};

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;          // global l2 norm of the raw gradient
  double precond_grad_norm = 0.0;  // global l2 norm of the applied update direction
  bool skipped_precond_update = false;
};

using GradFn = std::function<RnnGrads(const RnnParams&, const SequenceBatch&)>;

inline RnnGrads bptt_grad_fn(const RnnParams& p, const SequenceBatch& b) { return bptt_grad(p, b); }

// The 5-bit memorization task removes the loss-invariant directions of W2
// (the cross-entropy loss ignores a constant shift of all logits) by
// keeping W2, its gradients, and its perturbations in the zero-column-sum
// subspace. Without this the exact-gradient preconditioner sees
// perturbation directions with no matching gradient response and blows up
// along them.
struct StepHooks {
  bool project_w2_columns = false;
};

inline std::vector<LayerShape> layer_shapes(const RnnParams& p) {
  return {{p.W1.rows(), p.W1.cols()}, {p.W2.rows(), p.W2.cols()}};
}

inline double global_norm(const Matrix& dW1, const Matrix& dW2) {
  return std::sqrt(dW1.squaredNorm() + dW2.squaredNorm());
}

namespace detail {

inline void check_finite_grads(const RnnGrads& g) {
  if (!std::isfinite(g.loss) || !all_finite(g.dW1) || !all_finite(g.dW2))
    throw DivergedError("non-finite loss or gradient");
}

}  // namespace detail

// One PSGD iteration: evaluate the gradient, re-evaluate it at a tiny
// Gaussian perturbation of the parameters on the same batch, feed the
// (perturbation, gradient difference) pair to the preconditioner, then
// step along the preconditioned gradient. The preconditioner is updated
// before it is applied.
inline StepStats psgd_step(RnnParams& params, Preconditioner& precond, const SequenceBatch& batch,
                           const PsgdConfig& cfg, Rng& rng, const GradFn& grad_fn,
                           const StepHooks& hooks = {}) {
  cfg.validate();
  RnnGrads g = grad_fn(params, batch);
  detail::check_finite_grads(g);
  if (hooks.project_w2_columns) g.dW2 = project_zero_column_sum(std::move(g.dW2));

  Matrix d_theta1 = gaussian_matrix(params.W1.rows(), params.W1.cols(), cfg.perturbation_std, rng);
  Matrix d_theta2 = gaussian_matrix(params.W2.rows(), params.W2.cols(), cfg.perturbation_std, rng);
  if (hooks.project_w2_columns) d_theta2 = project_zero_column_sum(std::move(d_theta2));

  RnnParams perturbed = params;
  perturbed.W1 += d_theta1;
  perturbed.W2 += d_theta2;
  RnnGrads g_tilde = grad_fn(perturbed, batch);
  detail::check_finite_grads(g_tilde);
  if (hooks.project_w2_columns) g_tilde.dW2 = project_zero_column_sum(std::move(g_tilde.dW2));

  StepStats stats;
  stats.loss = g.loss;
  stats.grad_norm = global_norm(g.dW1, g.dW2);

  const std::vector<Matrix> d_theta{std::move(d_theta1), std::move(d_theta2)};
  const std::vector<Matrix> d_g{g_tilde.dW1 - g.dW1, g_tilde.dW2 - g.dW2};
  stats.skipped_precond_update = !precond.update(d_theta, d_g, cfg.precond_step);

  std::vector<Matrix> pg = precond.apply({std::move(g.dW1), std::move(g.dW2)});
  if (hooks.project_w2_columns) pg[1] = project_zero_column_sum(std::move(pg[1]));
  stats.precond_grad_norm = global_norm(pg[0], pg[1]);

  params.W1 -= cfg.mu * pg[0];
  params.W2 -= cfg.mu * pg[1];
  return stats;
}

// SGD baseline with global-norm gradient clipping: when |g|_2 exceeds the
// threshold the gradient is rescaled onto it, preserving its direction.
inline StepStats sgd_clipped_step(RnnParams& params, const SequenceBatch& batch, double step_size,
                                  double clip_threshold, const GradFn& grad_fn,
                                  const StepHooks& hooks = {}) {
  if (!(clip_threshold > 0.0)) throw ContractViolation("sgd_clipped_step: clip threshold must be > 0");
  RnnGrads g = grad_fn(params, batch);
  detail::check_finite_grads(g);
  if (hooks.project_w2_columns) g.dW2 = project_zero_column_sum(std::move(g.dW2));

  StepStats stats;
  stats.loss = g.loss;
  stats.grad_norm = global_norm(g.dW1, g.dW2);
  if (stats.grad_norm > clip_threshold) {
    const double scale = clip_threshold / stats.grad_norm;
    g.dW1 *= scale;
    g.dW2 *= scale;
  }
  stats.precond_grad_norm = global_norm(g.dW1, g.dW2);
  params.W1 -= step_size * g.dW1;
  params.W2 -= step_size * g.dW2;
  return stats;
}

// ---------------------------------------------------------------------------
// Full training loop for one trial.
// ---------------------------------------------------------------------------

enum class Algorithm { PsgdDense, PsgdKron, SgdClip };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::PsgdDense: return "psgd-dense";
    case Algorithm::PsgdKron: return "psgd-kron";
    case Algorithm::SgdClip: return "sgd-clip";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::PsgdDense, Algorithm::PsgdKron, Algorithm::SgdClip})
    if (name == algorithm_name(a)) return a;
  throw ConfigError("unknown algorithm '" + name + "'");
}

struct TrainConfig {
  Algorithm alg = Algorithm::PsgdKron;
  int hidden = 50;
  PsgdConfig psgd;
  double clip_threshold = 1.0;  // sgd-clip only; the step size is psgd.mu
};

struct StopRule {
  std::int64_t max_iters = 100000;
  int eval_interval = 100;
  int eval_batch_size = 1000;
};

struct EvalPoint {
  std::int64_t iter = 0;
  double train_loss = 0.0;
  double eval_metric = 0.0;
  double wall_s = 0.0;
};

struct RunRecord {
  int trial_index = 0;
  std::uint64_t seed = 0;
  bool success = false;
  bool diverged = false;
  std::int64_t iterations = 0;  // iterations to success, or iterations run
  double final_metric = std::numeric_limits<double>::quiet_NaN();
  std::vector<EvalPoint> series;
  double wall_seconds = 0.0;
  std::int64_t skipped_precond_updates = 0;
};

// Called after every completed iteration with that step's stats and the
// current parameters; the harness and tests attach observers here.
using StepSink = std::function<void(std::int64_t iter, const StepStats&, const RnnParams&)>;

// Runs one trial: fresh batch, one step, periodic success evaluation on a
// fresh evaluation batch, until success, divergence, or the iteration cap.
// Four independent substreams are derived from the trial seed (parameter
// init, training batches, perturbations, evaluation batches), so two
// algorithms started from the same seed share their initial parameters and
// see the same batch sequence. The 5-bit memorization task trains and
// evaluates on its full fixed 32-sequence batch and keeps W2 zero-column-sum.
inline RunRecord train(const TaskSpec& task, const TrainConfig& cfg, const StopRule& stop,
                       std::uint64_t trial_seed, const StepSink& sink = {},
                       const GradFn& grad_fn = bptt_grad_fn) {
  task.validate();
  cfg.psgd.validate();
  if (stop.max_iters < 0) throw ContractViolation("StopRule: max_iters must be >= 0");

  const auto t_start = std::chrono::steady_clock::now();
  const auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  Rng init_rng = Rng::derive(trial_seed, 1);
  Rng batch_rng = Rng::derive(trial_seed, 2);
  Rng perturb_rng = Rng::derive(trial_seed, 3);
  Rng eval_rng = Rng::derive(trial_seed, 4);

  const bool five_bit = task.kind == TaskKind::Memorization5Bit;
  RnnDims dims{task.n_u(), cfg.hidden, task.n_y()};
  RnnParams params = init_params(dims, init_rng);
  StepHooks hooks;
  if (five_bit) {
    hooks.project_w2_columns = true;
    params.W2 = project_zero_column_sum(std::move(params.W2));
  }

  Preconditioner precond;
  if (cfg.alg == Algorithm::PsgdDense)
    precond = Preconditioner::identity(PrecondKind::Dense, layer_shapes(params));
  else if (cfg.alg == Algorithm::PsgdKron)
    precond = Preconditioner::identity(PrecondKind::Kron, layer_shapes(params));

  std::optional<SequenceBatch> fixed_batch;
  if (five_bit) fixed_batch = five_bit_full_batch(task.seq_len);

  const auto evaluate = [&]() -> std::pair<bool, double> {
    if (fixed_batch) return success(task, params, *fixed_batch);
    return success(task, params, make_batch(task, stop.eval_batch_size, eval_rng));
  };

  RunRecord rec;
  rec.seed = trial_seed;
  std::int64_t iter = 0;
  while (iter < stop.max_iters) {
    StepStats stats;
    try {
      const SequenceBatch& batch =
          fixed_batch ? *fixed_batch : make_batch(task, cfg.psgd.batch_size, batch_rng);
      if (cfg.alg == Algorithm::SgdClip) {
        stats = sgd_clipped_step(params, batch, cfg.psgd.mu, cfg.clip_threshold, grad_fn, hooks);
      } else {
        PsgdConfig pc = cfg.psgd;
        pc.precond_kind = cfg.alg == Algorithm::PsgdDense ? PrecondKind::Dense : PrecondKind::Kron;
        stats = psgd_step(params, precond, batch, pc, perturb_rng, grad_fn, hooks);
      }
    } catch (const DivergedError&) {
      rec.diverged = true;
      rec.success = false;
      rec.iterations = iter;
      rec.wall_seconds = wall();
      return rec;
    }
    ++iter;
    if (stats.skipped_precond_update) ++rec.skipped_precond_updates;
    if (sink) sink(iter, stats, params);
    if (iter % stop.eval_interval == 0 || iter == stop.max_iters) {
      const auto [ok, metric] = evaluate();
      rec.series.push_back({iter, stats.loss, metric, wall()});
      rec.final_metric = metric;
      if (ok) {
        rec.success = true;
        rec.iterations = iter;
        rec.wall_seconds = wall();
        return rec;
      }
    }
  }
  rec.success = false;
  rec.iterations = stop.max_iters;
  rec.wall_seconds = wall();
  return rec;
}

}  // namespace psgd
