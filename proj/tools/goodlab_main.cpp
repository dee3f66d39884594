// goodlab command-line entry point.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "goodlab/bound.hpp"
#include "goodlab/dataset_io.hpp"
#include "goodlab/errors.hpp"
#include "goodlab/kvconfig.hpp"
#include "goodlab/sweep.hpp"
#include "goodlab/synth.hpp"
#include "goodlab/theory.hpp"
#include "goodlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace goodlab;

namespace {

KvConfig load_or_empty(const std::string& path) { return path.empty() ? KvConfig{} : KvConfig::load(path); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// GOODLAB_SEED wins over --seed and the config file.
void apply_seed_env(KvConfig& kv) {
  if (const char* s = std::getenv("GOODLAB_SEED"); s && *s) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != std::string(s).size() || v < 0) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ConfigError(std::string("GOODLAB_SEED is not a non-negative integer: '") + s + "'");
    }
    kv.set("seed", s);
  }
}

struct GenerateArgs {
  std::string kind, config, out, shift, means;
  std::optional<long long> seed, k, envs;
};

int cmd_generate(const GenerateArgs& a) {
  KvConfig kv = load_or_empty(a.config);
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  apply_seed_env(kv);
  if (!a.shift.empty()) kv.set("shift", a.shift);
  if (a.k) kv.set("k", std::to_string(*a.k));
  if (a.envs) kv.set("num_envs", std::to_string(*a.envs));
  if (!a.means.empty()) kv.set("means_file", a.means);
  const fs::path out = a.out;
  if (a.kind == "toy") {
    const ToyConfig cfg = toy_config_from_kv(kv);
    write_dataset(gen_toy(cfg), out);
    write_text(out / "config.kv", to_kv(cfg).serialize());
  } else if (a.kind == "scm") {
    const ScmConfig cfg = scm_config_from_kv(kv);
    write_dataset(gen_scm(cfg), out, "regression");
    write_text(out / "config.kv", to_kv(cfg).serialize());
  } else if (a.kind == "csbm") {
    const CsbmConfig cfg = csbm_config_from_kv(kv);
    const CsbmDataset ds = gen_csbm(cfg);
    write_dataset(ds.graph, out);
    write_csbm_means(ds.means, out / "means.json");
    write_text(out / "config.kv", to_kv(cfg).serialize());
  } else {
    throw ConfigError("unknown dataset kind '" + a.kind + "' (expected toy|scm|csbm)");
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::map<std::string, std::string> set;  // flag overrides, kv key -> value
  std::vector<std::string> switches;       // boolean kv keys turned on
};

KvConfig train_kv(const TrainArgs& a) {
  KvConfig kv = load_or_empty(a.config);
  for (const auto& [k, v] : a.set) kv.set(k, v);
  for (const auto& k : a.switches) kv.set(k, "true");
  apply_seed_env(kv);
  return kv;
}

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = run_config_from_kv(train_kv(a));
  const TrainSummary s = run_training(cfg);
  std::cout << s.to_json();
  return 0;
}

int cmd_verify(const std::string& scenario, const std::string& out, bool require_pass) {
  const OracleScenario sc = scenario.empty() ? OracleScenario{} : oracle_scenario_from_kv(KvConfig::load(scenario));
  const TheoryReport report = verify_theory(sc);
  const std::string text = report.to_json();
  if (!out.empty()) write_text(out, text);
  std::cout << text;
  return require_pass && !report.all_pass() ? 3 : 0;
}

int cmd_bound(const std::string& dataset, const BoundConfig& cfg, const std::string& out) {
  const Graph g = read_dataset(dataset);
  const CsbmMeans means = read_csbm_means(fs::path(dataset) / "means.json");
  const auto train = g.nodes_in(Split::Train);
  const auto test = g.nodes_in(Split::Test);
  if (train.empty() || test.empty()) throw ConfigError("bound: dataset needs train and test nodes");
  const BoundReport r = bound_terms(means, g, train, test, cfg);
  const std::string text = r.to_json();
  if (!out.empty()) write_text(out, text);
  std::cout << text;
  return 0;
}

int cmd_sweep(const TrainArgs& a, std::size_t jobs, const std::string& out) {
  const SweepGrid grid = sweep_grid_from_kv(train_kv(a));
  const fs::path dir = out.empty() ? grid.base.out : fs::path(out);
  if (dir.empty()) throw ConfigError("sweep: no output directory given");
  const auto cells = run_sweep(grid, jobs, dir);
  std::cout << aggregate_to_tsv(aggregate_cells(cells));
  std::size_t failed = 0;
  for (const auto& c : cells) failed += c.ok ? 0 : 1;
  if (failed) std::cerr << failed << " of " << cells.size() << " cells failed; see cells.tsv\n";
  return 0;
}

int cmd_report(const std::string& run, const std::string& out) {
  const auto records = read_records(fs::path(run) / "records.jsonl");
  if (records.empty()) throw ConfigError("report: " + run + " has no records");
  const std::string tsv = records_to_tsv(records);
  if (!out.empty()) {
    write_text(out, tsv);
  } else {
    std::cout << tsv;
  }
  return 0;
}

void add_run_flags(CLI::App* sub, TrainArgs& a) {
  sub->add_option("--config", a.config, "key = value run config");
  auto opt = [&](const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&a, key](const std::string& v) { a.set[key] = v; }, help);
  };
  opt("--dataset", "dataset", "dataset directory");
  opt("--model", "model", "theory_linear | gcn | gat");
  opt("--objective", "objective", "erm | irm | vrex | cia | cia_lra");
  opt("--lambda", "lambda", "penalty weight");
  opt("--hops", "hops", "local alignment range t");
  opt("--epochs", "epochs", "training steps");
  opt("--lr", "lr", "model learning rate");
  opt("--mask-lr", "mask_lr", "edge-mask encoder learning rate");
  opt("--pair-budget", "pair_budget", "pairs per class per step");
  opt("--subgraph", "subgraph", "nodes per step, 0 = whole graph");
  opt("--seed", "seed", "run seed (GOODLAB_SEED overrides)");
  opt("--warmup", "warmup", "penalty-free epochs");
  opt("--layers", "layers", "message-passing layers");
  opt("--hidden", "hidden", "hidden width, 0 = input width");
  opt("--mask-mode", "mask_mode", "sigmoid | minmax");
  opt("--out", "out", "output directory");
  auto sw = [&](const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_flag_callback(flag, [&a, key] { a.switches.push_back(key); }, help);
  };
  sw("--no-rdiff", "no_rdiff", "drop the heterophilic discrepancy factor");
  sw("--no-inv-rsame", "no_inv_rsame", "drop the 1/r_same factor");
  sw("--no-inv-d", "no_inv_d", "drop the 1/d factor");
  sw("--no-mask", "no_mask", "train without the edge mask");
  sw("--rsame-numerator", "rsame_numerator", "use r_same in the numerator");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"goodlab: node-level OOD generalization lab"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset directory");
  g->add_option("kind", gen.kind, "toy | scm | csbm")->required();
  g->add_option("--config", gen.config, "key = value generator config");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--shift", gen.shift, "concept | covariate");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--k", gen.k, "causal depth (scm)");
  g->add_option("--envs", gen.envs, "number of environments (scm, csbm)");
  g->add_option("--means", gen.means, "orthonormal means file (csbm)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model and write records, summary and checkpoint");
  add_run_flags(t, tr);

  std::string scenario, verify_out;
  bool require_pass = false;
  auto* v = app.add_subcommand("verify-theory", "numeric checks of the stationarity claims");
  v->add_option("--scenario", scenario, "key = value scenario (default scenario when omitted)");
  v->add_option("--out", verify_out, "also write the JSON report here");
  v->add_flag("--require-pass", require_pass, "exit 3 when a claim fails");

  std::string bound_dataset, bound_out;
  BoundConfig bc;
  double t_h = -1.0;
  auto* b = app.add_subcommand("bound", "bound terms on a CSBM dataset directory");
  b->add_option("--dataset", bound_dataset, "dataset directory with means.json")->required();
  b->add_option("--sigma2", bc.sigma2, "posterior variance");
  b->add_option("--alpha", bc.alpha, "recorded only");
  b->add_option("--delta", bc.delta, "recorded only");
  b->add_option("--gamma", bc.gamma, "recorded only");
  b->add_option("--t-h", t_h, "largest layer spectral norm of a trained head, recorded only");
  b->add_option("--out", bound_out, "also write the JSON report here");

  TrainArgs sw;
  std::string grid_file, sweep_out;
  std::size_t jobs = 1;
  auto* s = app.add_subcommand("sweep", "lambda x hops x seed grid");
  s->add_option("--grid", sw.config, "grid config; lambda, hops and seed may be lists")->required();
  s->add_option("--jobs", jobs, "parallel cells")->check(CLI::PositiveNumber);
  s->add_option("--out", sweep_out, "output directory");

  std::string report_run, report_out;
  auto* r = app.add_subcommand("report", "figure TSV from a run directory");
  r->add_option("--run", report_run, "directory with records.jsonl")->required();
  r->add_option("--out", report_out, "TSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*v) return cmd_verify(scenario, verify_out, require_pass);
    if (*b) {
      if (t_h >= 0.0) bc.t_h = t_h;
      return cmd_bound(bound_dataset, bc, bound_out);
    }
    if (*s) return cmd_sweep(sw, jobs, sweep_out);
    if (*r) return cmd_report(report_run, report_out);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
