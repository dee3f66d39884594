#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "goodlab/dataset_io.hpp"
#include "goodlab/errors.hpp"
#include "goodlab/sweep.hpp"
#include "goodlab/synth.hpp"
#include "goodlab/trainer.hpp"
#include "helpers.hpp"

using namespace goodlab;
using namespace goodlab::testing;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + GOODLAB_BIN + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string run_cli_stderr(const std::string& args) {
  const fs::path err = scratch_dir("cli-stderr") / "err.txt";
  const std::string cmd = std::string(GOODLAB_BIN) + " " + args + " >/dev/null 2>" + err.string();
  [[maybe_unused]] int rc = std::system(cmd.c_str());
  return slurp(err);
}

Graph toy(ShiftKind shift, std::uint64_t seed = 0) {
  ToyConfig cfg;
  cfg.shift = shift;
  cfg.seed = seed;
  return gen_toy(cfg);
}

RunConfig toy_run(ObjectiveKind obj, double lambda, std::size_t epochs) {
  RunConfig cfg;
  cfg.objective = obj;
  cfg.lambda = lambda;
  cfg.epochs = epochs;
  return cfg;
}

fs::path toy_dir() {
  const fs::path dir = scratch_dir("cli-toy");
  if (!fs::exists(dir / "config.kv")) {
    EXPECT_EQ(run_cli("generate toy --out " + dir.string()), 0);
  }
  return dir;
}

}  // namespace

TEST(Trainer, ZeroLambdaCiaLraFollowsErm) {
  const Graph g = toy(ShiftKind::Concept);
  const auto erm = train(toy_run(ObjectiveKind::Erm, 0.0, 40), g, false);
  const auto lra = train(toy_run(ObjectiveKind::CiaLra, 0.0, 40), g, false);
  ASSERT_EQ(erm.records.size(), lra.records.size());
  for (std::size_t i = 0; i < erm.records.size(); ++i) {
    EXPECT_EQ(erm.records[i].erm, lra.records[i].erm) << "epoch " << i;
    EXPECT_EQ(erm.records[i].train_metric, lra.records[i].train_metric);
    EXPECT_EQ(erm.records[i].test_metric, lra.records[i].test_metric);
    EXPECT_EQ(lra.records[i].penalty * 0.0, lra.records[i].total - lra.records[i].erm);
  }
}

TEST(Trainer, WarmupKeepsPenaltyAtZero) {
  const Graph g = toy(ShiftKind::Covariate);
  RunConfig cfg = toy_run(ObjectiveKind::Cia, 1.0, 12);
  cfg.warmup = 5;
  const auto res = train(cfg, g, false);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(res.records[i].penalty, 0.0) << "epoch " << i;
  bool later = false;
  for (std::size_t i = 5; i < res.records.size(); ++i) later = later || res.records[i].penalty > 0.0;
  EXPECT_TRUE(later);
}

TEST(Trainer, SinkSeesEveryRecordInOrder) {
  const Graph g = toy(ShiftKind::Concept);
  std::vector<std::size_t> epochs;
  const auto res = train(toy_run(ObjectiveKind::Vrex, 0.1, 7), g, false,
                         [&](const TrainingRecord& r) { epochs.push_back(r.epoch); });
  ASSERT_EQ(epochs.size(), res.records.size());
  for (std::size_t i = 0; i < epochs.size(); ++i) EXPECT_EQ(epochs[i], i);
}

TEST(Trainer, RecordsTsvHasOneRowPerEpoch) {
  const Graph g = toy(ShiftKind::Concept);
  const auto res = train(toy_run(ObjectiveKind::Erm, 0.0, 9), g, false);
  const std::string tsv = records_to_tsv(res.records);
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 10);
  EXPECT_EQ(tsv.rfind("epoch\term\tpenalty", 0), 0u);
}

TEST(Trainer, RejectsBadConfig) {
  const Graph g = toy(ShiftKind::Concept);
  RunConfig cfg = toy_run(ObjectiveKind::Cia, -1.0, 5);
  EXPECT_THROW(train(cfg, g, false), ConfigError);
  cfg = toy_run(ObjectiveKind::Cia, 1.0, 5);
  cfg.hops = 0;
  EXPECT_THROW(train(cfg, g, false), ConfigError);
}

TEST(Sweep, SingleCellMatchesTrain) {
  const fs::path data = toy_dir();
  RunConfig base = toy_run(ObjectiveKind::Cia, 0.3, 25);
  base.dataset = data;
  base.seed = 2;
  base.out = scratch_dir("sweep-single-train");
  const TrainSummary direct = run_training(base);

  SweepGrid grid;
  grid.base = base;
  grid.lambdas = {0.3};
  grid.hops = {base.hops};
  grid.seeds = {2};
  const auto cells = run_sweep(grid, 1, scratch_dir("sweep-single"));
  ASSERT_EQ(cells.size(), 1u);
  ASSERT_TRUE(cells[0].ok) << cells[0].error;
  EXPECT_EQ(cells[0].summary.best_epoch, direct.best_epoch);
  EXPECT_EQ(cells[0].summary.best_val, direct.best_val);
  EXPECT_EQ(cells[0].summary.test_at_best, direct.test_at_best);
}

TEST(Sweep, GridShapeAndAggregation) {
  const fs::path data = toy_dir();
  SweepGrid grid;
  grid.base = toy_run(ObjectiveKind::Vrex, 0.0, 10);
  grid.base.dataset = data;
  grid.lambdas = {0.0, 0.1, 1.0};
  grid.hops = {2};
  grid.seeds = {1, 2, 3};
  const fs::path out = scratch_dir("sweep-grid");
  const auto cells = run_sweep(grid, 2, out);
  ASSERT_EQ(cells.size(), 9u);
  const std::string tsv = slurp(out / "cells.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 10);

  const auto agg = aggregate_cells(cells);
  ASSERT_EQ(agg.size(), 3u);
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<double> v;
    for (const auto& c : cells) {
      ASSERT_TRUE(c.ok) << c.error;
      if (c.lambda == grid.lambdas[a]) v.push_back(c.summary.test_at_best);
    }
    ASSERT_EQ(v.size(), 3u);
    const double mean = (v[0] + v[1] + v[2]) / 3.0;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_EQ(agg[a].runs, 3u);
    EXPECT_NEAR(agg[a].mean, mean, 1e-12);
    EXPECT_NEAR(agg[a].stddev, std::sqrt(ss / 2.0), 1e-12);
  }
  // grid order: lambda major, then seed
  EXPECT_EQ(cells[4].lambda, 0.1);
  EXPECT_EQ(cells[4].seed, 2u);
}

TEST(Sweep, RejectsOversizedGrid) {
  SweepGrid grid;
  for (int i = 0; i < 11; ++i) grid.lambdas.push_back(0.1 * i);
  grid.hops = {1};
  grid.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(grid.validate(), ConfigError);
}

TEST(Sweep, GridFromKvLists) {
  const auto kv = KvConfig::parse("dataset = x\nobjective = cia\nlambda = 0, 0.5\nhops = 1, 3\nseed = 1, 2, 3\n");
  const SweepGrid grid = sweep_grid_from_kv(kv);
  EXPECT_EQ(grid.size(), 12u);
  EXPECT_EQ(grid.base.objective, ObjectiveKind::Cia);
}

TEST(Cli, GenerateIsByteDeterministic) {
  for (const std::string kind : {"toy", "scm", "csbm"}) {
    const fs::path a = scratch_dir("gen-a-" + kind), b = scratch_dir("gen-b-" + kind);
    ASSERT_EQ(run_cli("generate " + kind + " --seed 9 --out " + a.string()), 0);
    ASSERT_EQ(run_cli("generate " + kind + " --seed 9 --out " + b.string()), 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      ++files;
      EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << kind << " " << e.path().filename();
    }
    EXPECT_GT(files, 1u);
  }
}

TEST(Cli, ScmEnvironmentCount) {
  const fs::path dir = scratch_dir("gen-scm-envs");
  ASSERT_EQ(run_cli("generate scm --k 2 --envs 3 --out " + dir.string()), 0);
  const Graph g = read_dataset(dir);
  EXPECT_EQ(std::set<int>(g.envs.begin(), g.envs.end()).size(), 3u);
  EXPECT_EQ(read_dataset_task(dir), "regression");
}

TEST(Cli, CsbmRejectsNonOrthonormalMeans) {
  const fs::path dir = scratch_dir("gen-csbm-bad");
  const fs::path means = dir / "means.txt";
  std::ofstream(means) << "1 0 0 0\n0.6 0.8 0 0\n0 0 1 0\n";
  const std::string err = run_cli_stderr("generate csbm --means " + means.string() + " --out " + (dir / "d").string());
  EXPECT_NE(err.find("max pairwise |dot|"), std::string::npos) << err;
  EXPECT_EQ(run_cli("generate csbm --means " + means.string() + " --out " + (dir / "d").string()), 1);
}

TEST(Cli, TrainSummaryIsByteDeterministic) {
  const fs::path data = toy_dir(), out = scratch_dir("cli-det");
  const std::string args = "train --dataset " + data.string() + " --objective cia_lra --lambda 0.5 --epochs 20 --seed 4 --out " +
                           out.string();
  ASSERT_EQ(run_cli(args), 0);
  const std::string s1 = slurp(out / "summary.json"), c1 = slurp(out / "checkpoint.json");
  ASSERT_EQ(run_cli(args), 0);
  EXPECT_EQ(s1, slurp(out / "summary.json"));
  EXPECT_EQ(c1, slurp(out / "checkpoint.json"));
  const fs::path tsv = out / "fig.tsv";
  ASSERT_EQ(run_cli("report --run " + out.string() + " --out " + tsv.string()), 0);
  const std::string t = slurp(tsv);
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 21);
}

TEST(Cli, SeedEnvironmentOverride) {
  const fs::path data = toy_dir(), out = scratch_dir("cli-seed-env");
  const std::string args = "train --dataset " + data.string() + " --epochs 3 --seed 1 --out " + out.string();
  ASSERT_EQ(run_cli(args, "GOODLAB_SEED=7"), 0);
  EXPECT_NE(slurp(out / "summary.json").find("\"seed\": \"7\""), std::string::npos) << slurp(out / "summary.json");
  EXPECT_EQ(run_cli(args, "GOODLAB_SEED=x7"), 1);
}

TEST(Cli, ErrorsExitNonzero) {
  const fs::path out = scratch_dir("cli-errors");
  EXPECT_EQ(run_cli("train --dataset /nonexistent/goodlab --out " + out.string()), 1);
  EXPECT_EQ(run_cli("train --dataset " + toy_dir().string() + " --objective nope --out " + out.string()), 1);
  EXPECT_EQ(run_cli("train --dataset " + toy_dir().string() + " --lambda -2 --out " + out.string()), 1);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_NE(run_cli(""), 0);
  EXPECT_EQ(run_cli("bound --dataset " + toy_dir().string()), 1);  // no means.json
}

TEST(Cli, ErmConceptShiftBand) {
  const fs::path data = scratch_dir("cli-toy-concept"), out = scratch_dir("cli-erm-band");
  ASSERT_EQ(run_cli("generate toy --shift concept --out " + data.string()), 0);
  ASSERT_EQ(run_cli("train --dataset " + data.string() + " --objective erm --out " + out.string()), 0);
  const auto records = read_records(out / "records.jsonl");
  ASSERT_EQ(records.size(), RunConfig{}.epochs);
  EXPECT_GE(records.back().test_metric, 0.25);
  EXPECT_LE(records.back().test_metric, 0.45);
}
