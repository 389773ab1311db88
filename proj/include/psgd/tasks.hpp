#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "psgd/rnn.hpp"

namespace psgd {

// Eight synthetic long-memory problems. Each generator documents its exact
// layout here since these formats are normative for every number this
// project reports:
//
//   Addition / Multiplication: n_u = 2 (value channel uniform in [0,1],
//     marker channel in {0,1}). Two marked positions, the first uniform in
//     steps [1, T/10], the second in [T/10+1, T/2] (1-based); target
//     (a+b)/2 resp. a*b at the final step only. MSE, n_y = 1.
//   Xor: same marker layout over a binary value channel; target a XOR b as
//     a 2-class problem at the final step. Cross entropy, n_y = 2.
//   TemporalOrder2/3: one-hot alphabet of 2 signal symbols {A,B} plus 4
//     distractors (n_u = 6). Two (resp. three) signal symbols at random
//     distinct positions in [T/10, T/2] (split into three equal windows
//     for the 3-bit variant); target is the ordered tuple as one of 4
//     (resp. 8) classes at the final step. Cross entropy.
//   RandomPermutation: one-hot alphabet of 100 symbols. First symbol is 1
//     or 2; positions 2..T-1 are uniform over {3..100}; the last input is
//     the fixed query symbol 3. The target at step t is the next symbol,
//     except at the last scored step T-1 where it is the first symbol --
//     the only prediction that is learnable. Loss is scored on steps
//     1..T-1; the success metric scores only step T-1. Cross entropy,
//     n_y = 100.
//   Memorization5Bit: 5 bits in steps 1..5 over one-hot channels
//     {bit0, bit1, distractor, cue} (n_u = 4); cue at step T-5; targets
//     reproduce the bits at steps T-4..T and the distractor class
//     everywhere else. Every step is scored. Cross entropy, n_y = 3.
//     The input space has exactly 32 distinct sequences.
//   Memorization20Bit: 10 symbols from a 4-letter alphabet (20 bits) in
//     steps 1..10, cue at step T-10, reproduction at steps T-9..T;
//     n_u = 6, n_y = 5, every step scored.
enum class TaskKind {
  Addition,
  Multiplication,
  Xor,
  TemporalOrder2,
  TemporalOrder3,
  RandomPermutation,
  Memorization5Bit,
  Memorization20Bit,
};

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::Addition: return "addition";
    case TaskKind::Multiplication: return "multiplication";
    case TaskKind::Xor: return "xor";
    case TaskKind::TemporalOrder2: return "temporal2";
    case TaskKind::TemporalOrder3: return "temporal3";
    case TaskKind::RandomPermutation: return "randperm";
    case TaskKind::Memorization5Bit: return "mem5bit";
    case TaskKind::Memorization20Bit: return "mem20bit";
  }
  return "unknown";
}

inline TaskKind parse_task(const std::string& name) {
  for (TaskKind k : {TaskKind::Addition, TaskKind::Multiplication, TaskKind::Xor,
                     TaskKind::TemporalOrder2, TaskKind::TemporalOrder3,
                     TaskKind::RandomPermutation, TaskKind::Memorization5Bit,
                     TaskKind::Memorization20Bit})
    if (name == task_name(k)) return k;
  throw SpecError("unknown task '" + name + "'");
}

struct TaskSpec {
  TaskKind kind = TaskKind::Addition;
  int seq_len = 30;
  // When len_hi > 0 the length of each batch is drawn uniformly from
  // [len_lo, len_hi] instead of using seq_len.
  int len_lo = 0;
  int len_hi = 0;

  bool has_range() const { return len_hi > 0; }

  int n_u() const {
    switch (kind) {
      case TaskKind::Addition:
      case TaskKind::Multiplication:
      case TaskKind::Xor: return 2;
      case TaskKind::TemporalOrder2:
      case TaskKind::TemporalOrder3: return 6;
      case TaskKind::RandomPermutation: return 100;
      case TaskKind::Memorization5Bit: return 4;
      case TaskKind::Memorization20Bit: return 6;
    }
    return 0;
  }

  int n_y() const {
    switch (kind) {
      case TaskKind::Addition:
      case TaskKind::Multiplication: return 1;
      case TaskKind::Xor: return 2;
      case TaskKind::TemporalOrder2: return 4;
      case TaskKind::TemporalOrder3: return 8;
      case TaskKind::RandomPermutation: return 100;
      case TaskKind::Memorization5Bit: return 3;
      case TaskKind::Memorization20Bit: return 5;
    }
    return 0;
  }

  LossKind loss_kind() const {
    return (kind == TaskKind::Addition || kind == TaskKind::Multiplication) ? LossKind::Mse
                                                                            : LossKind::CrossEntropy;
  }

  int min_len() const {
    switch (kind) {
      case TaskKind::Memorization5Bit: return 11;   // cue must land after the 5 bits
      case TaskKind::Memorization20Bit: return 21;  // cue must land after the 10 symbols
      default: return 10;
    }
  }

  void validate() const {
    const int lo = has_range() ? len_lo : seq_len;
    const int hi = has_range() ? len_hi : seq_len;
    if (lo < min_len())
      throw SpecError(std::string("task ") + task_name(kind) + ": sequence length " +
                      std::to_string(lo) + " too short (minimum " + std::to_string(min_len()) + ")");
    if (hi < lo) throw SpecError("task length range is empty");
  }
};

// One task instance. Inputs are n_u x T (one column per step); targets are
// dense for MSE tasks and class indices (-1 at unscored steps) otherwise.
struct SequenceSample {
  int T = 0;
  Matrix inputs;
  Matrix targets;
  Eigen::VectorXi classes;
  std::vector<std::uint8_t> loss_mask;
  std::vector<std::uint8_t> eval_mask;
};

namespace detail {

// 1-based inclusive uniform position helper, returned 0-based.
inline int pos_uniform(Rng& rng, int lo1, int hi1) {
  return static_cast<int>(rng.uniform_int(lo1, hi1)) - 1;
}

inline SequenceSample marker_pair_sample(const TaskSpec& spec, int T, Rng& rng) {
  SequenceSample s;
  s.T = T;
  s.inputs.setZero(2, T);
  s.loss_mask.assign(static_cast<std::size_t>(T), 0);
  s.loss_mask.back() = 1;
  s.eval_mask = s.loss_mask;
  const bool binary = spec.kind == TaskKind::Xor;
  for (int t = 0; t < T; ++t)
    s.inputs(0, t) = binary ? static_cast<double>(rng.uniform_int(0, 1)) : rng.uniform();
  const int p1 = pos_uniform(rng, 1, T / 10);
  const int p2 = pos_uniform(rng, T / 10 + 1, T / 2);
  s.inputs(1, p1) = 1.0;
  s.inputs(1, p2) = 1.0;
  const double a = s.inputs(0, p1);
  const double b = s.inputs(0, p2);
  if (spec.kind == TaskKind::Xor) {
    s.classes = Eigen::VectorXi::Constant(T, -1);
    s.classes(T - 1) = (static_cast<int>(a) != static_cast<int>(b)) ? 1 : 0;
  } else {
    s.targets.setZero(1, T);
    s.targets(0, T - 1) = spec.kind == TaskKind::Addition ? 0.5 * (a + b) : a * b;
  }
  return s;
}

inline SequenceSample temporal_order_sample(const TaskSpec& spec, int T, Rng& rng) {
  const int n_signals = spec.kind == TaskKind::TemporalOrder2 ? 2 : 3;
  SequenceSample s;
  s.T = T;
  s.inputs.setZero(6, T);
  s.loss_mask.assign(static_cast<std::size_t>(T), 0);
  s.loss_mask.back() = 1;
  s.eval_mask = s.loss_mask;
  s.classes = Eigen::VectorXi::Constant(T, -1);

  const int lo = T / 10;      // 0-based window [T/10 - 1, T/2 - 1], 1-based [T/10, T/2]
  const int hi = T / 2;
  std::vector<int> positions;
  if (n_signals == 2) {
    int p1 = pos_uniform(rng, lo, hi);
    int p2 = pos_uniform(rng, lo, hi);
    while (p2 == p1) p2 = pos_uniform(rng, lo, hi);
    positions = {std::min(p1, p2), std::max(p1, p2)};
  } else {
    // Three equal consecutive windows of the same span, one symbol each.
    const int span = hi - lo + 1;
    if (span < 3) throw SpecError("temporal3: sequence too short for three windows");
    const int b0 = lo, b1 = lo + span / 3, b2 = lo + (2 * span) / 3, b3 = hi + 1;
    positions = {pos_uniform(rng, b0, b1 - 1), pos_uniform(rng, b1, b2 - 1),
                 pos_uniform(rng, b2, b3 - 1)};
  }

  int cls = 0;
  std::size_t next_signal = 0;
  for (int t = 0; t < T; ++t) {
    if (next_signal < positions.size() && t == positions[next_signal]) {
      const int sym = static_cast<int>(rng.uniform_int(0, 1));  // A or B
      s.inputs(sym, t) = 1.0;
      cls = 2 * cls + sym;
      ++next_signal;
    } else {
      s.inputs(2 + static_cast<int>(rng.uniform_int(0, 3)), t) = 1.0;  // distractor
    }
  }
  s.classes(T - 1) = cls;
  return s;
}

inline constexpr int kPermAlphabet = 100;
inline constexpr int kPermQuerySymbol = 2;  // symbol "3", 0-based

inline SequenceSample random_permutation_sample(int T, Rng& rng) {
  SequenceSample s;
  s.T = T;
  s.inputs.setZero(kPermAlphabet, T);
  s.classes = Eigen::VectorXi::Constant(T, -1);
  s.loss_mask.assign(static_cast<std::size_t>(T), 1);
  s.loss_mask.back() = 0;  // loss on steps 1..T-1 (1-based)
  s.eval_mask.assign(static_cast<std::size_t>(T), 0);
  s.eval_mask[static_cast<std::size_t>(T - 2)] = 1;  // only the recall step is scored

  std::vector<int> sym(static_cast<std::size_t>(T));
  sym[0] = static_cast<int>(rng.uniform_int(0, 1));
  for (int t = 1; t < T - 1; ++t) sym[static_cast<std::size_t>(t)] = static_cast<int>(rng.uniform_int(2, 99));
  sym[static_cast<std::size_t>(T - 1)] = kPermQuerySymbol;
  for (int t = 0; t < T; ++t) s.inputs(sym[static_cast<std::size_t>(t)], t) = 1.0;
  for (int t = 0; t + 2 < T; ++t) s.classes(t) = sym[static_cast<std::size_t>(t) + 1];
  s.classes(T - 2) = sym[0];
  return s;
}

inline SequenceSample memorization5_sample_from_code(int T, unsigned code) {
  SequenceSample s;
  s.T = T;
  s.inputs.setZero(4, T);
  s.classes = Eigen::VectorXi::Constant(T, 2);  // distractor class by default
  s.loss_mask.assign(static_cast<std::size_t>(T), 1);
  s.eval_mask = s.loss_mask;
  const int cue = T - 6;     // 0-based; 1-based step T-5
  const int recall = T - 5;  // recall occupies the last five steps
  for (int t = 0; t < T; ++t) {
    if (t < 5)
      s.inputs(static_cast<int>((code >> t) & 1u), t) = 1.0;
    else if (t == cue)
      s.inputs(3, t) = 1.0;
    else
      s.inputs(2, t) = 1.0;
  }
  for (int i = 0; i < 5; ++i) s.classes(recall + i) = static_cast<int>((code >> i) & 1u);
  return s;
}

inline SequenceSample memorization20_sample(int T, Rng& rng) {
  SequenceSample s;
  s.T = T;
  s.inputs.setZero(6, T);
  s.classes = Eigen::VectorXi::Constant(T, 4);
  s.loss_mask.assign(static_cast<std::size_t>(T), 1);
  s.eval_mask = s.loss_mask;
  const int cue = T - 11;
  const int recall = T - 10;
  int symbols[10];
  for (auto& v : symbols) v = static_cast<int>(rng.uniform_int(0, 3));
  for (int t = 0; t < T; ++t) {
    if (t < 10)
      s.inputs(symbols[t], t) = 1.0;
    else if (t == cue)
      s.inputs(5, t) = 1.0;
    else
      s.inputs(4, t) = 1.0;
  }
  for (int i = 0; i < 10; ++i) s.classes(recall + i) = symbols[i];
  return s;
}

}  // namespace detail

inline int pick_length(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  return spec.has_range() ? static_cast<int>(rng.uniform_int(spec.len_lo, spec.len_hi))
                          : spec.seq_len;
}

inline SequenceSample generate_with_length(const TaskSpec& spec, int T, Rng& rng) {
  if (T < spec.min_len())
    throw SpecError(std::string("task ") + task_name(spec.kind) + ": T=" + std::to_string(T) +
                    " too short to place the required markers");
  switch (spec.kind) {
    case TaskKind::Addition:
    case TaskKind::Multiplication:
    case TaskKind::Xor:
      return detail::marker_pair_sample(spec, T, rng);
    case TaskKind::TemporalOrder2:
    case TaskKind::TemporalOrder3:
      return detail::temporal_order_sample(spec, T, rng);
    case TaskKind::RandomPermutation:
      return detail::random_permutation_sample(T, rng);
    case TaskKind::Memorization5Bit:
      return detail::memorization5_sample_from_code(T, static_cast<unsigned>(rng.uniform_int(0, 31)));
    case TaskKind::Memorization20Bit:
      return detail::memorization20_sample(T, rng);
  }
  throw SpecError("generate: unknown task kind");
}

inline SequenceSample generate(const TaskSpec& spec, Rng& rng) {
  return generate_with_length(spec, pick_length(spec, rng), rng);
}

// Assemble a batch of equal-length samples. When the spec carries a length
// range, one length is drawn per batch so all members match.
inline SequenceBatch make_batch(const TaskSpec& spec, int batch_size, Rng& rng) {
  if (batch_size < 1) throw SpecError("make_batch: batch_size must be >= 1");
  const int T = pick_length(spec, rng);
  SequenceBatch b;
  b.loss_kind = spec.loss_kind();
  b.T = T;
  b.batch = batch_size;
  b.n_u = spec.n_u();
  b.n_y = spec.n_y();
  std::vector<SequenceSample> samples;
  samples.reserve(static_cast<std::size_t>(batch_size));
  for (int k = 0; k < batch_size; ++k) samples.push_back(generate_with_length(spec, T, rng));
  b.loss_mask = samples.front().loss_mask;
  b.eval_mask = samples.front().eval_mask;
  b.inputs.resize(static_cast<std::size_t>(T));
  b.targets.resize(static_cast<std::size_t>(T));
  b.classes.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    b.inputs[static_cast<std::size_t>(t)].resize(b.n_u, batch_size);
    for (int k = 0; k < batch_size; ++k)
      b.inputs[static_cast<std::size_t>(t)].col(k) = samples[static_cast<std::size_t>(k)].inputs.col(t);
    if (!b.loss_mask[static_cast<std::size_t>(t)]) continue;
    if (b.loss_kind == LossKind::Mse) {
      b.targets[static_cast<std::size_t>(t)].resize(b.n_y, batch_size);
      for (int k = 0; k < batch_size; ++k)
        b.targets[static_cast<std::size_t>(t)].col(k) = samples[static_cast<std::size_t>(k)].targets.col(t);
    } else {
      b.classes[static_cast<std::size_t>(t)].resize(batch_size);
      for (int k = 0; k < batch_size; ++k)
        b.classes[static_cast<std::size_t>(t)](k) = samples[static_cast<std::size_t>(k)].classes(t);
    }
  }
  return b;
}

// The full 32-sequence input space of the 5-bit memorization task in a
// fixed enumeration order. The task is trained and evaluated on exactly
// this batch, so its gradient is deterministic.
inline SequenceBatch five_bit_full_batch(int T) {
  TaskSpec spec;
  spec.kind = TaskKind::Memorization5Bit;
  spec.seq_len = T;
  spec.validate();
  SequenceBatch b;
  b.loss_kind = LossKind::CrossEntropy;
  b.T = T;
  b.batch = 32;
  b.n_u = 4;
  b.n_y = 3;
  std::vector<SequenceSample> samples;
  samples.reserve(32);
  for (unsigned code = 0; code < 32; ++code)
    samples.push_back(detail::memorization5_sample_from_code(T, code));
  b.loss_mask = samples.front().loss_mask;
  b.eval_mask = samples.front().eval_mask;
  b.inputs.resize(static_cast<std::size_t>(T));
  b.targets.resize(static_cast<std::size_t>(T));
  b.classes.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    b.inputs[static_cast<std::size_t>(t)].resize(4, 32);
    b.classes[static_cast<std::size_t>(t)].resize(32);
    for (int k = 0; k < 32; ++k) {
      b.inputs[static_cast<std::size_t>(t)].col(k) = samples[static_cast<std::size_t>(k)].inputs.col(t);
      b.classes[static_cast<std::size_t>(t)](k) = samples[static_cast<std::size_t>(k)].classes(t);
    }
  }
  return b;
}

// Per-sequence pass/fail from already-computed outputs. A continuous task
// fails a sequence when any scored output misses its target by more than
// 0.04 in absolute value; a discrete task when any scored step is
// misclassified (argmax over classes, first index wins ties). The batch
// metric is the failing fraction, and the run counts as a success when it
// is below 1%.
inline std::pair<bool, double> success_from_outputs(const TaskSpec& spec, const ForwardTrace& trace,
                                                    const SequenceBatch& batch) {
  const double kAbsTol = 0.04;
  int failed = 0;
  for (int k = 0; k < batch.batch; ++k) {
    bool bad = false;
    for (int t = 0; t < batch.T && !bad; ++t) {
      if (!batch.eval_mask[static_cast<std::size_t>(t)]) continue;
      const Matrix& y = trace.outputs[static_cast<std::size_t>(t)];
      if (batch.loss_kind == LossKind::Mse) {
        const Matrix& tgt = batch.targets[static_cast<std::size_t>(t)];
        if ((y.col(k) - tgt.col(k)).cwiseAbs().maxCoeff() > kAbsTol) bad = true;
      } else {
        Index pred = 0;
        y.col(k).maxCoeff(&pred);
        if (static_cast<int>(pred) != batch.classes[static_cast<std::size_t>(t)](k)) bad = true;
      }
    }
    failed += bad ? 1 : 0;
  }
  const double metric = static_cast<double>(failed) / static_cast<double>(batch.batch);
  (void)spec;
  return {metric < 0.01, metric};
}

inline std::pair<bool, double> success(const TaskSpec& spec, const RnnParams& params,
                                       const SequenceBatch& batch) {
  return success_from_outputs(spec, forward(params, batch), batch);
}

// Text dump of generated samples: a file header naming the task and seed,
// then one record per sequence with tab-separated channels, one input step
// per line, followed by the targets and the masks.
inline void dump_samples(std::ostream& os, const TaskSpec& spec, int count, std::uint64_t seed) {
  spec.validate();
  Rng rng = Rng::derive(seed, 0xd0);
  char buf[64];
  os << "# task " << task_name(spec.kind) << " seed " << seed << " count " << count << " n_u "
     << spec.n_u() << " n_y " << spec.n_y() << '\n';
  for (int k = 0; k < count; ++k) {
    const SequenceSample s = generate(spec, rng);
    os << "record " << k << " T " << s.T << '\n';
    for (int t = 0; t < s.T; ++t) {
      os << "u";
      for (Index c = 0; c < s.inputs.rows(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.9g", s.inputs(c, t));
        os << '\t' << buf;
      }
      os << '\n';
    }
    if (spec.loss_kind() == LossKind::Mse) {
      os << "targets";
      for (int t = 0; t < s.T; ++t) {
        std::snprintf(buf, sizeof(buf), "%.9g", s.targets(0, t));
        os << '\t' << buf;
      }
    } else {
      os << "classes";
      for (int t = 0; t < s.T; ++t) os << '\t' << s.classes(t);
    }
    os << '\n' << "loss_mask";
    for (auto m : s.loss_mask) os << '\t' << static_cast<int>(m);
    os << '\n' << "eval_mask";
    for (auto m : s.eval_mask) os << '\t' << static_cast<int>(m);
    os << '\n';
  }
  if (!os) throw IoError("dump_samples: write failed");
}

}  // namespace psgd
