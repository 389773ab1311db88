#include "psgd/harness.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace psgd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("psgd_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  EXPECT_TRUE(f.good()) << p;
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Zeroes the wall-clock column, the one legitimately non-reproducible
// field of a trial CSV.
std::string mask_wall_column(const std::string& csv) {
  std::istringstream is(csv);
  std::string line, out;
  bool header = true;
  while (std::getline(is, line)) {
    if (!header) {
      const auto last_comma = line.rfind(',');
      if (last_comma != std::string::npos) line.resize(last_comma + 1);
    }
    header = false;
    out += line;
    out += '\n';
  }
  return out;
}

ExperimentConfig tiny_config(const fs::path& dir) {
  ExperimentConfig c;
  c.task.kind = TaskKind::Xor;
  c.task.seq_len = 10;
  c.alg = Algorithm::PsgdKron;
  c.hidden = 8;
  c.trials = 3;
  c.master_seed = 5;
  c.max_iters = 150;
  c.batch_size = 16;
  c.eval_interval = 50;
  c.eval_batch = 64;
  c.out_dir = dir.string();
  return c;
}

}  // namespace

TEST(RunExperiment, WritesSchemaStableCsvPerTrial) {
  const auto dir = fresh_dir("run");
  const auto config = tiny_config(dir);
  RunSummary summary;
  const auto records = run_experiment(config, &summary);
  ASSERT_EQ(records.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(records[k].trial_index, k);
    const auto csv = slurp(dir / ("xor_psgd-kron_T10_trial" + std::to_string(k) + ".csv"));
    EXPECT_EQ(csv.rfind("iter,train_loss,eval_metric,wall_s\n", 0), 0u);
  }
  EXPECT_EQ(summary.trials, 3);
  int failures = 0;
  for (const auto& r : records) failures += r.success ? 0 : 1;
  EXPECT_EQ(summary.failures, failures);

  const auto sum_csv = slurp(dir / "summary.csv");
  EXPECT_EQ(sum_csv.rfind("task,alg,seq_len,failures,trials,median_iters\n", 0), 0u);
  std::ostringstream expect_row;
  expect_row << "xor,psgd-kron,10," << summary.failures << ",3," << summary.median_iters;
  EXPECT_NE(sum_csv.find(expect_row.str()), std::string::npos);
  fs::remove_all(dir);
}

TEST(RunExperiment, IterationCapOneFailsEveryTrial) {
  const auto dir = fresh_dir("cap1");
  auto config = tiny_config(dir);
  config.trials = 5;
  config.max_iters = 1;
  RunSummary summary;
  run_experiment(config, &summary);
  EXPECT_EQ(summary.failure_string(), "5/5");
  fs::remove_all(dir);
}

TEST(RunExperiment, UnwritableOutputPathFailsBeforeTraining) {
  auto config = tiny_config("/proc/psgd_cannot_write_here");
  EXPECT_THROW(run_experiment(config), IoError);
}

TEST(RunExperiment, InvalidConfigRejected) {
  const auto dir = fresh_dir("bad");
  auto config = tiny_config(dir);
  config.trials = 0;
  EXPECT_THROW(run_experiment(config), ConfigError);
  config = tiny_config(dir);
  config.step_size = 1.5;
  EXPECT_THROW(run_experiment(config), ConfigError);
  fs::remove_all(dir);
}

TEST(RunExperiment, ByteIdenticalAcrossRunsAndJobs) {
  const auto dir1 = fresh_dir("det1");
  const auto dir2 = fresh_dir("det2");
  auto c1 = tiny_config(dir1);
  auto c2 = tiny_config(dir2);
  c2.jobs = 3;
  run_experiment(c1);
  run_experiment(c2);
  for (int k = 0; k < 3; ++k) {
    const auto name = "xor_psgd-kron_T10_trial" + std::to_string(k) + ".csv";
    EXPECT_EQ(mask_wall_column(slurp(dir1 / name)), mask_wall_column(slurp(dir2 / name)));
  }
  EXPECT_EQ(slurp(dir1 / "summary.csv"), slurp(dir2 / "summary.csv"));
  EXPECT_EQ(slurp(dir1 / "summary.txt"), slurp(dir2 / "summary.txt"));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(Compare, RequiresSharedFields) {
  const auto dir = fresh_dir("cmpbad");
  auto a = tiny_config(dir);
  auto b = tiny_config(dir);
  b.alg = Algorithm::SgdClip;
  b.master_seed = 6;
  EXPECT_THROW(compare({a, b}), ComparisonError);
  b = tiny_config(dir);
  b.hidden = 9;
  EXPECT_THROW(compare({a, b}), ComparisonError);
  b = tiny_config(dir);
  b.task.seq_len = 12;
  EXPECT_THROW(compare({a, b}), ComparisonError);
  EXPECT_THROW(compare({}), ComparisonError);
  fs::remove_all(dir);
}

TEST(Compare, IdenticalAlgorithmTwiceGivesIdenticalCurves) {
  const auto dir = fresh_dir("cmpsame");
  auto a = tiny_config(dir);
  a.max_iters = 120;
  const auto result = compare({a, a});
  ASSERT_EQ(result.entries.size(), 2u);
  const auto& ra = result.entries[0].record;
  const auto& rb = result.entries[1].record;
  ASSERT_EQ(ra.series.size(), rb.series.size());
  for (std::size_t i = 0; i < ra.series.size(); ++i) {
    EXPECT_EQ(ra.series[i].train_loss, rb.series[i].train_loss);
    EXPECT_EQ(ra.series[i].eval_metric, rb.series[i].eval_metric);
  }
  const auto csv = slurp(result.csv_path);
  EXPECT_EQ(csv.rfind("iter,psgd-kron_0_loss,psgd-kron_1_loss\n", 0), 0u);
  fs::remove_all(dir);
}

TEST(Compare, SingleConfigRanksTrivially) {
  const auto dir = fresh_dir("cmp1");
  auto a = tiny_config(dir);
  a.max_iters = 60;
  const auto result = compare({a});
  ASSERT_EQ(result.ranking.size(), 1u);
  EXPECT_EQ(result.ranking[0], 0u);
  fs::remove_all(dir);
}

TEST(Compare, RanksBySuccessThenLoss) {
  const auto dir = fresh_dir("cmprank");
  auto fast = tiny_config(dir);
  fast.max_iters = 400;
  auto slow = fast;
  slow.alg = Algorithm::SgdClip;  // at this budget the baseline should not win
  const auto result = compare({slow, fast});
  const auto& best = result.entries[result.ranking.front()];
  const auto& worst = result.entries[result.ranking.back()];
  const auto key = [](const CompareEntry& e) {
    return e.record.success ? e.record.iterations : std::numeric_limits<std::int64_t>::max();
  };
  EXPECT_LE(key(best), key(worst));
  fs::remove_all(dir);
}

TEST(Sweep, VerdictsCoverAllThreeShapes) {
  const auto dir = fresh_dir("sweep");
  auto base = tiny_config(dir);
  base.trials = 2;
  base.max_iters = 1;  // every length fails
  auto all_fail = max_length_sweep(base, {10, 12});
  EXPECT_EQ(all_fail.max_len_verdict, "< 10");
  ASSERT_EQ(all_fail.rows.size(), 2u);
  EXPECT_EQ(all_fail.rows[0].failures, 2);

  EXPECT_THROW(max_length_sweep(base, {}), ConfigError);
  EXPECT_THROW(max_length_sweep(base, {12, 10}), ConfigError);

  const auto csv = slurp(dir / "sweep_xor_psgd-kron.csv");
  EXPECT_EQ(csv.rfind("seq_len,failures,trials,median_iters\n", 0), 0u);
  fs::remove_all(dir);
}

TEST(FmtG9, NineSignificantDigits) {
  EXPECT_EQ(fmt_g9(0.125), "0.125");
  EXPECT_EQ(fmt_g9(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(fmt_g9(12345.6789), "12345.6789");
  EXPECT_EQ(fmt_g9(std::numeric_limits<double>::quiet_NaN()), "nan");
}
