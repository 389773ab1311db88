#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "psgd/optimizer.hpp"
#include "psgd/tasks.hpp"

namespace psgd {

// Experiment front-end: multi-seed trial execution, per-trial CSV logging,
// and failure-rate summaries. All numeric output is deterministic for a
// given config, independent of --jobs; the only non-reproducible column is
// the wall-clock one.

struct ExperimentConfig {
  TaskSpec task;
  Algorithm alg = Algorithm::PsgdKron;
  int hidden = 50;
  int trials = 5;
  std::uint64_t master_seed = 1;
  std::int64_t max_iters = 100000;
  int batch_size = 100;
  double step_size = 0.01;
  double precond_step = 0.01;
  double clip_threshold = 1.0;
  int eval_interval = 100;
  int eval_batch = 1000;
  int jobs = 1;
  std::string out_dir = "out";

  void validate() const {
    task.validate();
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (hidden < 1) throw ConfigError("hidden must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(step_size > 0.0 && step_size < 1.0)) throw ConfigError("step_size must be in (0,1)");
    if (!(precond_step > 0.0)) throw ConfigError("precond_step must be > 0");
    if (!(clip_threshold > 0.0)) throw ConfigError("clip_threshold must be > 0");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
    if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.alg = alg;
    tc.hidden = hidden;
    tc.psgd.mu = step_size;
    tc.psgd.precond_step = precond_step;
    tc.psgd.batch_size = batch_size;
    tc.clip_threshold = clip_threshold;
    return tc;
  }

  StopRule stop_rule() const { return {max_iters, eval_interval, eval_batch}; }

  std::string len_label() const {
    if (task.has_range())
      return std::to_string(task.len_lo) + "-" + std::to_string(task.len_hi);
    return std::to_string(task.seq_len);
  }

  std::string len_field() const {
    if (task.has_range())
      return std::to_string(task.len_lo) + ":" + std::to_string(task.len_hi);
    return std::to_string(task.seq_len);
  }

  std::string trial_csv_name(int trial) const {
    return std::string(task_name(task.kind)) + "_" + algorithm_name(alg) + "_T" + len_label() +
           "_trial" + std::to_string(trial) + ".csv";
  }
};

// Floats are printed with 9 significant digits everywhere, so identical
// runs produce identical bytes.
inline std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::uint64_t trial_seed(std::uint64_t master_seed, int trial) {
  return mix_seed(master_seed, 0x7472ULL + static_cast<std::uint64_t>(trial));
}

namespace detail {

inline void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  const auto probe = std::filesystem::path(dir) / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw IoError("output directory '" + dir + "' is not writable");
  }
  std::filesystem::remove(probe, ec);
}

inline void write_trial_csv(const std::string& path, const RunRecord& rec) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "iter,train_loss,eval_metric,wall_s\n";
  for (const auto& p : rec.series)
    f << p.iter << ',' << fmt_g9(p.train_loss) << ',' << fmt_g9(p.eval_metric) << ','
      << fmt_g9(p.wall_s) << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

// Median iterations-to-success over all trials, counting failed trials at
// the iteration cap; the lower middle value is taken for even counts.
inline std::int64_t median_iters(const std::vector<RunRecord>& recs, std::int64_t cap) {
  std::vector<std::int64_t> v;
  v.reserve(recs.size());
  for (const auto& r : recs) v.push_back(r.success ? r.iterations : cap);
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

}  // namespace detail

struct RunSummary {
  int failures = 0;
  int trials = 0;
  std::int64_t median_iters = 0;

  std::string failure_string() const {
    return std::to_string(failures) + "/" + std::to_string(trials);
  }
};

// Executes config.trials independent trials (worker pool of config.jobs
// threads), writes one CSV per trial plus summary.txt and summary.csv into
// config.out_dir, and returns the records in trial order.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& config,
                                             RunSummary* summary_out = nullptr,
                                             bool write_summary = true) {
  config.validate();
  detail::ensure_out_dir(config.out_dir);

  std::vector<RunRecord> records(static_cast<std::size_t>(config.trials));
  std::atomic<int> next{0};
  std::atomic<bool> io_failed{false};
  std::string io_error;
  std::mutex io_mutex;

  const auto worker = [&] {
    for (int k; (k = next.fetch_add(1)) < config.trials;) {
      RunRecord rec = train(config.task, config.train_config(), config.stop_rule(),
                            trial_seed(config.master_seed, k));
      rec.trial_index = k;
      try {
        detail::write_trial_csv(
            (std::filesystem::path(config.out_dir) / config.trial_csv_name(k)).string(), rec);
      } catch (const std::exception& e) {
        std::lock_guard lock(io_mutex);
        io_failed = true;
        io_error = e.what();
      }
      records[static_cast<std::size_t>(k)] = std::move(rec);
    }
  };

  const int n_workers = std::min(config.jobs, config.trials);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_workers - 1));
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (io_failed) throw IoError(io_error);

  RunSummary summary;
  summary.trials = config.trials;
  for (const auto& r : records) summary.failures += r.success ? 0 : 1;
  summary.median_iters = detail::median_iters(records, config.max_iters);
  if (summary_out) *summary_out = summary;

  if (write_summary) {
    const auto dir = std::filesystem::path(config.out_dir);
    {
      std::ofstream f(dir / "summary.csv");
      f << "task,alg,seq_len,failures,trials,median_iters\n";
      f << task_name(config.task.kind) << ',' << algorithm_name(config.alg) << ','
        << config.len_field() << ',' << summary.failures << ',' << summary.trials << ','
        << summary.median_iters << '\n';
      if (!f) throw IoError("write failed for summary.csv");
    }
    {
      std::ofstream f(dir / "summary.txt");
      f << "task          alg         seq_len   failures  median_iters\n";
      char line[160];
      std::snprintf(line, sizeof(line), "%-13s %-11s %-9s %-9s %lld\n", task_name(config.task.kind),
                    algorithm_name(config.alg), config.len_field().c_str(),
                    summary.failure_string().c_str(),
                    static_cast<long long>(summary.median_iters));
      f << line;
      if (!f) throw IoError("write failed for summary.txt");
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Algorithm comparison from one shared initial guess (one trial per
// algorithm, same seed), aligned for curve plotting.
// ---------------------------------------------------------------------------

struct CompareEntry {
  Algorithm alg;
  RunRecord record;
  double final_loss = 0.0;
};

struct CompareResult {
  std::vector<CompareEntry> entries;   // in input order
  std::vector<std::size_t> ranking;    // indices into entries, best first
  std::string csv_path;
};

// Validates that every config shares the task, hidden size, seed, and step
// size, runs each algorithm from the identical seed-forced initial
// parameters, writes an aligned loss-vs-iteration CSV, and ranks by
// iterations-to-success with ties broken by final training loss.
inline CompareResult compare(const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) throw ComparisonError("compare: no configs");
  const ExperimentConfig& base = configs.front();
  for (const auto& c : configs) {
    c.validate();
    if (c.task.kind != base.task.kind || c.task.seq_len != base.task.seq_len ||
        c.task.len_lo != base.task.len_lo || c.task.len_hi != base.task.len_hi)
      throw ComparisonError("compare: configs must share the task");
    if (c.hidden != base.hidden) throw ComparisonError("compare: configs must share hidden size");
    if (c.master_seed != base.master_seed) throw ComparisonError("compare: configs must share the seed");
    if (c.step_size != base.step_size) throw ComparisonError("compare: configs must share the step size");
    if (c.eval_interval != base.eval_interval)
      throw ComparisonError("compare: configs must share the eval interval");
  }
  detail::ensure_out_dir(base.out_dir);

  CompareResult result;
  result.entries.reserve(configs.size());
  for (const auto& c : configs) {
    RunRecord rec = train(c.task, c.train_config(), c.stop_rule(), trial_seed(c.master_seed, 0));
    CompareEntry e;
    e.alg = c.alg;
    e.final_loss = rec.series.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : rec.series.back().train_loss;
    e.record = std::move(rec);
    result.entries.push_back(std::move(e));
  }

  // Aligned CSV: one row per shared eval point, one loss column per entry,
  // blank after an entry's run has stopped.
  std::int64_t last_iter = 0;
  for (const auto& e : result.entries)
    if (!e.record.series.empty()) last_iter = std::max(last_iter, e.record.series.back().iter);
  const auto csv_path = std::filesystem::path(base.out_dir) /
                        (std::string("compare_") + task_name(base.task.kind) + "_T" +
                         base.len_label() + ".csv");
  {
    std::ofstream f(csv_path);
    if (!f) throw IoError("cannot open '" + csv_path.string() + "' for writing");
    f << "iter";
    for (std::size_t i = 0; i < result.entries.size(); ++i)
      f << ',' << algorithm_name(result.entries[i].alg) << '_' << i << "_loss";
    f << '\n';
    for (std::int64_t it = base.eval_interval; it <= last_iter; it += base.eval_interval) {
      f << it;
      for (const auto& e : result.entries) {
        f << ',';
        const auto& s = e.record.series;
        const std::size_t idx = static_cast<std::size_t>(it / base.eval_interval) - 1;
        if (idx < s.size() && s[idx].iter == it) f << fmt_g9(s[idx].train_loss);
      }
      f << '\n';
    }
    if (!f) throw IoError("write failed for '" + csv_path.string() + "'");
  }
  result.csv_path = csv_path.string();

  result.ranking.resize(result.entries.size());
  for (std::size_t i = 0; i < result.ranking.size(); ++i) result.ranking[i] = i;
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](std::size_t l, std::size_t r) {
    const auto& a = result.entries[l];
    const auto& b = result.entries[r];
    const std::int64_t ia = a.record.success ? a.record.iterations
                                             : std::numeric_limits<std::int64_t>::max();
    const std::int64_t ib = b.record.success ? b.record.iterations
                                             : std::numeric_limits<std::int64_t>::max();
    if (ia != ib) return ia < ib;
    return a.final_loss < b.final_loss;
  });
  return result;
}

// ---------------------------------------------------------------------------
// Failure-rate sweep over ascending sequence lengths.
// ---------------------------------------------------------------------------

struct SweepRow {
  int seq_len = 0;
  int failures = 0;
  int trials = 0;
  std::int64_t median_iters = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  // Largest tested length with zero failures: "L", ">= L" when every
  // length passed, "< L" when none did.
  std::string max_len_verdict;
};

inline SweepResult max_length_sweep(const ExperimentConfig& base, const std::vector<int>& lengths) {
  if (lengths.empty()) throw ConfigError("sweep: no lengths given");
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1]) throw ConfigError("sweep: lengths must be strictly ascending");

  SweepResult result;
  int best = -1;
  for (int len : lengths) {
    ExperimentConfig c = base;
    c.task.seq_len = len;
    c.task.len_lo = c.task.len_hi = 0;
    RunSummary summary;
    run_experiment(c, &summary, /*write_summary=*/false);
    result.rows.push_back({len, summary.failures, summary.trials, summary.median_iters});
    if (summary.failures == 0) best = len;
  }
  const bool all_clean =
      std::all_of(result.rows.begin(), result.rows.end(), [](const SweepRow& r) { return r.failures == 0; });
  if (best < 0)
    result.max_len_verdict = "< " + std::to_string(lengths.front());
  else if (all_clean)
    result.max_len_verdict = ">= " + std::to_string(lengths.back());
  else
    result.max_len_verdict = std::to_string(best);

  const auto path = std::filesystem::path(base.out_dir) /
                    (std::string("sweep_") + task_name(base.task.kind) + "_" +
                     algorithm_name(base.alg) + ".csv");
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << "seq_len,failures,trials,median_iters\n";
  for (const auto& r : result.rows)
    f << r.seq_len << ',' << r.failures << ',' << r.trials << ',' << r.median_iters << '\n';
  if (!f) throw IoError("write failed for '" + path.string() + "'");
  return result;
}

}  // namespace psgd
