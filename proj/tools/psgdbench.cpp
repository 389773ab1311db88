// Benchmark harness CLI: multi-seed training runs, algorithm comparisons
// from a shared initial guess, failure-rate sweeps over sequence lengths,
// and task sample dumps. See docs/config.md for the config file format,
// output schemas, and exit codes.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "psgd/harness.hpp"

namespace {

struct CliOptions {
  std::string task = "addition";
  std::string alg = "psgd-kron";
  std::string seq_len = "30";
  int hidden = 50;
  int trials = 5;
  std::uint64_t seed = 1;
  std::int64_t max_iters = 100000;
  int batch_size = 100;
  double step_size = 0.01;
  double precond_step = 0.01;
  double clip = 1.0;
  int eval_interval = 100;
  int eval_batch = 1000;
  int jobs = 1;
  std::string out = "out";
};

// "30" or "lo:hi".
void parse_seq_len(const std::string& text, psgd::TaskSpec& spec) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      spec.seq_len = std::stoi(text);
      spec.len_lo = spec.len_hi = 0;
    } else {
      spec.len_lo = std::stoi(text.substr(0, colon));
      spec.len_hi = std::stoi(text.substr(colon + 1));
    }
  } catch (const std::exception&) {
    throw psgd::ConfigError("cannot parse sequence length '" + text + "'");
  }
}

psgd::ExperimentConfig to_config(const CliOptions& o) {
  psgd::ExperimentConfig c;
  c.task.kind = psgd::parse_task(o.task);
  parse_seq_len(o.seq_len, c.task);
  c.alg = psgd::parse_algorithm(o.alg);
  c.hidden = o.hidden;
  c.trials = o.trials;
  c.master_seed = o.seed;
  c.max_iters = o.max_iters;
  c.batch_size = o.batch_size;
  c.step_size = o.step_size;
  c.precond_step = o.precond_step;
  c.clip_threshold = o.clip;
  c.eval_interval = o.eval_interval;
  c.eval_batch = o.eval_batch;
  c.jobs = o.jobs;
  c.out_dir = o.out;
  return c;
}

void add_common_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--task", o.task,
                  "Task: addition multiplication xor temporal2 temporal3 randperm mem5bit mem20bit");
  cmd->add_option("--seq-len", o.seq_len, "Sequence length, fixed (30) or a range (20:40)");
  cmd->add_option("--hidden", o.hidden, "Hidden layer size");
  cmd->add_option("--trials", o.trials, "Independent trials");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--max-iters", o.max_iters, "Iteration cap per trial");
  cmd->add_option("--batch-size", o.batch_size, "Training mini-batch size");
  cmd->add_option("--step-size", o.step_size, "Parameter step size (mu)");
  cmd->add_option("--precond-step", o.precond_step, "Preconditioner factor step size");
  cmd->add_option("--clip", o.clip, "Gradient clipping threshold for sgd-clip");
  cmd->add_option("--eval-interval", o.eval_interval, "Iterations between success evaluations");
  cmd->add_option("--eval-batch", o.eval_batch, "Evaluation batch size");
  cmd->add_option("--jobs", o.jobs, "Concurrent trials");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->set_config("--config", "", "Read options from a key = value file; flags override it");
}

int exit_code_for(int failures) { return failures > 0 ? 2 : 0; }

int cmd_run(const CliOptions& o) {
  const auto config = to_config(o);
  psgd::RunSummary summary;
  const auto records = psgd::run_experiment(config, &summary);
  for (const auto& r : records)
    std::printf("trial %d seed %llu %s iters %lld metric %s%s\n", r.trial_index,
                static_cast<unsigned long long>(r.seed), r.success ? "success" : "FAILED",
                static_cast<long long>(r.iterations), psgd::fmt_g9(r.final_metric).c_str(),
                r.diverged ? " (diverged)" : "");
  std::printf("%s %s T=%s: failures %s, median iters %lld, output in %s\n",
              psgd::task_name(config.task.kind), psgd::algorithm_name(config.alg),
              config.len_field().c_str(), summary.failure_string().c_str(),
              static_cast<long long>(summary.median_iters), config.out_dir.c_str());
  return exit_code_for(summary.failures);
}

int cmd_compare(const CliOptions& o, const std::vector<std::string>& algs) {
  std::vector<psgd::ExperimentConfig> configs;
  for (const auto& name : algs) {
    CliOptions oo = o;
    oo.alg = name;
    configs.push_back(to_config(oo));
  }
  const auto result = psgd::compare(configs);
  std::printf("curves: %s\n", result.csv_path.c_str());
  std::printf("rank  algorithm    iters-to-success  final-loss\n");
  int rank = 1;
  int failures = 0;
  for (const auto idx : result.ranking) {
    const auto& e = result.entries[idx];
    failures += e.record.success ? 0 : 1;
    std::printf("%-5d %-12s %-17s %s\n", rank++, psgd::algorithm_name(e.alg),
                e.record.success ? std::to_string(e.record.iterations).c_str() : "-",
                psgd::fmt_g9(e.final_loss).c_str());
  }
  return exit_code_for(failures);
}

int cmd_sweep(const CliOptions& o, const std::vector<int>& lengths) {
  const auto base = to_config(o);
  const auto result = psgd::max_length_sweep(base, lengths);
  std::printf("seq_len  failures  median_iters\n");
  int failures = 0;
  for (const auto& row : result.rows) {
    failures += row.failures;
    std::printf("%-8d %d/%d       %lld\n", row.seq_len, row.failures, row.trials,
                static_cast<long long>(row.median_iters));
  }
  std::printf("max length without failure: %s\n", result.max_len_verdict.c_str());
  return exit_code_for(failures);
}

int cmd_dump(const CliOptions& o, int count, const std::string& out_file) {
  psgd::TaskSpec spec;
  spec.kind = psgd::parse_task(o.task);
  parse_seq_len(o.seq_len, spec);
  if (out_file == "-") {
    psgd::dump_samples(std::cout, spec, count, o.seed);
  } else {
    std::ofstream f(out_file);
    if (!f) throw psgd::IoError("cannot open '" + out_file + "' for writing");
    psgd::dump_samples(f, spec, count, o.seed);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PSGD benchmark harness for long-memory RNN tasks"};
  app.require_subcommand(1);

  CliOptions o;
  std::vector<std::string> algs{"psgd-dense", "psgd-kron", "sgd-clip"};
  std::vector<int> lengths{30, 50};
  int dump_count = 5;
  std::string dump_out = "-";

  auto* run = app.add_subcommand("run", "Train one task/algorithm over several seeds");
  add_common_flags(run, o);
  run->add_option("--alg", o.alg, "Algorithm: psgd-dense psgd-kron sgd-clip");

  auto* cmp = app.add_subcommand("compare", "Race algorithms from one shared initial guess");
  add_common_flags(cmp, o);
  cmp->add_option("--algs", algs, "Algorithms to compare")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "Failure rate over ascending sequence lengths");
  add_common_flags(sweep, o);
  sweep->add_option("--alg", o.alg, "Algorithm: psgd-dense psgd-kron sgd-clip");
  sweep->add_option("--lengths", lengths, "Ascending sequence lengths")->delimiter(',');

  auto* dump = app.add_subcommand("dump", "Write generated task samples as text");
  dump->add_option("--task", o.task, "Task name");
  dump->add_option("--seq-len", o.seq_len, "Sequence length, fixed or range");
  dump->add_option("--seed", o.seed, "Generator seed");
  dump->add_option("--count", dump_count, "Number of samples");
  dump->add_option("--out", dump_out, "Output file, or - for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(o);
    if (cmp->parsed()) return cmd_compare(o, algs);
    if (sweep->parsed()) return cmd_sweep(o, lengths);
    if (dump->parsed()) return cmd_dump(o, dump_count, dump_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
