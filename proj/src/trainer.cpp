#include "goodlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "goodlab/checkpoint.hpp"
#include "goodlab/dataset_io.hpp"
#include "goodlab/errors.hpp"
#include "goodlab/metrics.hpp"
#include "goodlab/optim.hpp"

namespace goodlab {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(ModelKind m) {
  switch (m) {
    case ModelKind::TheoryLinear:
      return "theory_linear";
    case ModelKind::Gcn:
      return "gcn";
    case ModelKind::Gat:
      return "gat";
  }
  return "?";
}

ModelKind parse_model(const std::string& s) {
  if (s == "theory_linear") return ModelKind::TheoryLinear;
  if (s == "gcn") return ModelKind::Gcn;
  if (s == "gat") return ModelKind::Gat;
  throw ConfigError("unknown model '" + s + "' (expected theory_linear|gcn|gat)");
}

void RunConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(mask_lr > 0.0)) throw ConfigError("mask_lr must be > 0");
  if (hops < 1) throw ConfigError("hops must be >= 1");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (subgraph == 1) throw ConfigError("subgraph must be 0 (whole graph) or >= 2");
}

ObjectiveConfig RunConfig::objective_config(bool regression) const {
  ObjectiveConfig oc;
  oc.kind = objective;
  oc.lambda = lambda;
  oc.hops = hops;
  oc.pair_budget = pair_budget;
  oc.switches = switches;
  oc.warmup = warmup;
  oc.r_same_floor = r_same_floor;
  oc.regression = regression;
  oc.validate();
  return oc;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{
      "dataset", "model",  "objective", "lambda",    "hops",       "epochs",          "lr",
      "mask_lr", "pair_budget", "subgraph", "seed",  "no_rdiff",   "no_inv_rsame",    "no_inv_d",
      "no_mask", "rsame_numerator", "warmup", "r_same_floor", "layers", "hidden",   "relu",            "layer_bias",
      "split",   "mask_mode", "out"};
  return keys;
}

namespace {

std::size_t count_key(const KvConfig& kv, const std::string& key, std::size_t fallback) {
  const long long v = kv.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError("config key '" + key + "': must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

RunConfig run_config_from_kv(const KvConfig& kv) {
  kv.require_known(run_config_keys());
  RunConfig c;
  c.dataset = kv.get_string("dataset", "");
  c.model = parse_model(kv.get_string("model", to_string(c.model)));
  c.objective = parse_objective(kv.get_string("objective", to_string(c.objective)));
  c.lambda = kv.get_double("lambda", c.lambda);
  c.hops = count_key(kv, "hops", c.hops);
  c.epochs = count_key(kv, "epochs", c.epochs);
  c.lr = kv.get_double("lr", c.lr);
  c.mask_lr = kv.get_double("mask_lr", c.mask_lr);
  c.pair_budget = count_key(kv, "pair_budget", c.pair_budget);
  c.subgraph = count_key(kv, "subgraph", c.subgraph);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.switches.use_r_diff = !kv.get_bool("no_rdiff", false);
  c.switches.use_inv_r_same = !kv.get_bool("no_inv_rsame", false);
  c.switches.use_inv_d = !kv.get_bool("no_inv_d", false);
  c.switches.use_mask = !kv.get_bool("no_mask", false);
  c.switches.r_same_in_numerator = kv.get_bool("rsame_numerator", false);
  c.warmup = count_key(kv, "warmup", c.warmup);
  c.r_same_floor = kv.get_double("r_same_floor", c.r_same_floor);
  c.layers = count_key(kv, "layers", c.layers);
  c.hidden = count_key(kv, "hidden", c.hidden);
  c.relu = kv.get_bool("relu", c.relu);
  c.layer_bias = kv.get_bool("layer_bias", c.layer_bias);
  c.split = kv.get_bool("split", c.split);
  c.mask_mode = parse_mask_mode(kv.get_string("mask_mode", to_string(c.mask_mode)));
  c.out = kv.get_string("out", "");
  c.validate();
  return c;
}

KvConfig to_kv(const RunConfig& c) {
  KvConfig kv;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv.set("dataset", c.dataset.string());
  kv.set("model", to_string(c.model));
  kv.set("objective", to_string(c.objective));
  kv.set("lambda", format_double(c.lambda));
  kv.set("hops", std::to_string(c.hops));
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("lr", format_double(c.lr));
  kv.set("mask_lr", format_double(c.mask_lr));
  kv.set("pair_budget", std::to_string(c.pair_budget));
  kv.set("subgraph", std::to_string(c.subgraph));
  kv.set("seed", std::to_string(c.seed));
  kv.set("no_rdiff", b(!c.switches.use_r_diff));
  kv.set("no_inv_rsame", b(!c.switches.use_inv_r_same));
  kv.set("no_inv_d", b(!c.switches.use_inv_d));
  kv.set("no_mask", b(!c.switches.use_mask));
  kv.set("rsame_numerator", b(c.switches.r_same_in_numerator));
  kv.set("warmup", std::to_string(c.warmup));
  kv.set("r_same_floor", format_double(c.r_same_floor));
  kv.set("layers", std::to_string(c.layers));
  kv.set("hidden", std::to_string(c.hidden));
  kv.set("relu", b(c.relu));
  kv.set("layer_bias", b(c.layer_bias));
  kv.set("split", b(c.split));
  kv.set("mask_mode", to_string(c.mask_mode));
  kv.set("out", c.out.string());
  return kv;
}

namespace {

json record_json(const TrainingRecord& r, bool include_time) {
  const std::string m = r.regression ? "mse" : "acc";
  json j;
  j["epoch"] = r.epoch;
  j["erm"] = r.erm;
  j["penalty"] = r.penalty;
  j["total"] = r.total;
  j["train_" + m] = r.train_metric;
  j["val_" + m] = r.val_metric;
  j["test_" + m] = r.test_metric;
  j["invariant_variance"] = r.invariant_variance;
  j["spurious_norm"] = r.spurious_norm;
  if (include_time) j["wall_ms"] = r.wall_ms;
  return j;
}

}  // namespace

std::string TrainingRecord::to_json(bool include_time) const { return record_json(*this, include_time).dump(); }

std::string TrainSummary::to_json() const {
  json j;
  json cfg;
  const KvConfig kv = to_kv(config);
  for (const auto& [k, v] : kv.entries()) {
    if (k == "dataset" || k == "out") continue;
    cfg[k] = v;
  }
  j["config"] = cfg;
  j["task"] = regression ? "regression" : "classification";
  j["selection"] = regression ? "lowest validation mse, earliest on ties" : "highest validation accuracy, earliest on ties";
  j["epochs_run"] = epochs_run;
  j["best_epoch"] = best_epoch;
  j["best_val"] = best_val;
  j["test_at_best"] = test_at_best;
  j["final"] = record_json(final_record, false);
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

namespace {

// Graph artifacts for one step: the whole graph or a sampled induced subgraph.
struct StepGraph {
  const Graph* graph = nullptr;
  Graph owned;
  GraphContext ctx;
  std::vector<std::size_t> train;
  EnvPartition part;
  std::optional<HopDistanceTable> hops;
  CsrPtr step;  // A~ - I for the theory model

  void build(const Graph& g, bool theory) {
    graph = &g;
    ctx = GraphContext::build(g);
    train = g.nodes_in(Split::Train);
    part = make_env_partition(g);
    if (theory) step = tilde_minus_identity(build_normalized(g));
  }
};

struct Forward {
  Var outputs, reps;
  std::optional<Var> edge_weights;
};

double regression_mse(const Tensor& pred, const std::vector<double>& y, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i : nodes) s += (pred(i, 0) - y[i]) * (pred(i, 0) - y[i]);
  return s / static_cast<double>(nodes.size());
}

std::vector<double> tensor_scalars(const std::vector<Tensor>& t) {
  std::vector<double> out;
  for (const auto& x : t) out.push_back(x.item());
  return out;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const Graph& g, bool regression, const RecordSink& sink) {
  cfg.validate();
  g.validate();
  const ObjectiveConfig oc = cfg.objective_config(regression);
  const bool theory = cfg.model == ModelKind::TheoryLinear;
  if (theory && !regression) throw ConfigError("model theory_linear needs a regression dataset (targets.tsv)");
  if (theory && g.feature_dim() != 2) throw ConfigError("model theory_linear needs exactly 2 feature columns (X1, X2)");
  if (!theory && regression) throw ConfigError("models gcn and gat train on classification datasets only");
  if (g.nodes_in(Split::Train).empty()) throw ConfigError("dataset has no training nodes");

  const Supervision sup = Supervision::from_graph(g, regression);
  const bool lra = cfg.objective == ObjectiveKind::CiaLra;
  // At lambda = 0 the objective is plain ERM, so the mask stays off too.
  const bool use_mask = lra && cfg.switches.use_mask && !theory && cfg.lambda > 0.0;
  const bool sample_steps = cfg.subgraph > 0 && cfg.subgraph < g.num_nodes;
  if (!sample_steps && cfg.subgraph == 0 && g.num_nodes > 5000) {
    throw ConfigError("graph has " + std::to_string(g.num_nodes) + " nodes; set subgraph for graphs above 5000");
  }

  // Parameters.
  std::optional<MpnnParams> model;
  std::optional<EdgeMaskParams> mask;
  std::vector<Tensor> theory_params;
  if (theory) {
    Rng rng(cfg.seed, "train/theory-init");
    TheoryGnnParams init;
    init.theta1 = rng.uniform(-1.0, 1.0);
    init.theta2 = rng.uniform(-1.0, 1.0);
    init.layers.resize(cfg.layers);
    for (auto& l : init.layers) {
      l.inv_neighbor = rng.uniform(0.0, 1.0);
      l.inv_self = rng.uniform(0.5, 1.5);
      l.sp_neighbor = rng.uniform(0.0, 1.0);
      l.sp_self = rng.uniform(0.5, 1.5);
    }
    for (double v : init.flatten()) theory_params.push_back(Tensor::scalar(v));
  } else {
    MpnnConfig mc;
    mc.aggregator = cfg.model == ModelKind::Gat ? Aggregator::Attention : Aggregator::Gcn;
    mc.in_dim = g.feature_dim();
    mc.hidden = cfg.hidden ? cfg.hidden : g.feature_dim();
    mc.num_layers = cfg.layers;
    mc.num_classes = g.num_classes;
    mc.activation = cfg.relu ? Activation::Relu : Activation::Identity;
    mc.layer_bias = cfg.layer_bias;
    mc.split_input = cfg.split && mc.in_dim % 2 == 0 && mc.hidden % 2 == 0;
    Rng rng(cfg.seed, "train/model-init");
    model = MpnnParams::init(mc, rng);
    if (use_mask) {
      Rng mrng(cfg.seed, "train/mask-init");
      mask = EdgeMaskParams::init(mc, cfg.mask_mode, mrng);
    }
  }
  std::vector<Tensor*> model_ptrs;
  std::vector<std::string> model_names;
  if (theory) {
    for (auto& t : theory_params) model_ptrs.push_back(&t);
    model_names = TheoryGnnParams::scalar_names(cfg.layers + 1);
  } else {
    model_ptrs = model->tensors();
    model_names = model->names();
  }
  std::vector<Tensor*> mask_ptrs;
  std::vector<std::string> mask_names;
  if (mask) {
    mask_ptrs = mask->encoder.tensors();
    for (const auto& n : mask->encoder.names()) mask_names.push_back("mask." + n);
  }
  Adam model_opt(AdamHyper{cfg.lr});
  Adam mask_opt(AdamHyper{cfg.mask_lr});

  StepGraph full;
  full.build(g, theory);
  // The clamped mask is strictly positive, so reachability on A_m equals
  // reachability on A and the hop table only changes with the subgraph.
  if (lra) full.hops = bounded_shortest_paths(g, cfg.hops);

  const auto val_nodes = g.nodes_in(Split::Val);
  const auto test_nodes = g.nodes_in(Split::Test);
  const auto& diag_nodes = test_nodes.empty() ? full.train : test_nodes;

  auto forward = [&](Tape& tape, const StepGraph& sg, std::vector<Var>& model_vars,
                     std::vector<Var>& mask_vars) -> Forward {
    const Graph& sgg = *sg.graph;
    Forward f;
    if (theory) {
      model_vars.clear();
      for (const auto& t : theory_params) model_vars.push_back(tape.leaf(t));
      Tensor x1(sgg.num_nodes, 1), x2(sgg.num_nodes, 1);
      for (std::size_t i = 0; i < sgg.num_nodes; ++i) {
        x1(i, 0) = sgg.features(i, 0);
        x2(i, 0) = sgg.features(i, 1);
      }
      const auto out = theory_gnn_forward(tape, model_vars, sg.step, tape.constant(std::move(x1)),
                                          tape.constant(std::move(x2)));
      f.outputs = out.prediction;
      f.reps = concat_cols(out.h_inv, out.h_sp);
      return f;
    }
    const Var x = tape.constant(sgg.features);
    MpnnVars mv = bind(tape, *model);
    model_vars = mv.tensors;
    if (mask) {
      MpnnVars kv = bind(tape, mask->encoder);
      mask_vars = kv.tensors;
      f.edge_weights = edge_mask_weights(*mask, kv, sg.ctx, x);
    }
    const auto out = mpnn_forward(*model, mv, sg.ctx, x, f.edge_weights);
    f.outputs = out.logits;
    f.reps = out.representation;
    return f;
  };

  auto evaluate = [&](const Tensor& outputs, const Tensor& reps, TrainingRecord& rec) {
    if (regression) {
      rec.train_metric = regression_mse(outputs, g.targets, full.train);
      rec.val_metric = regression_mse(outputs, g.targets, val_nodes);
      rec.test_metric = regression_mse(outputs, g.targets, test_nodes);
    } else {
      rec.train_metric = ood_accuracy(outputs, g.labels, full.train);
      rec.val_metric = val_nodes.empty() ? 0.0 : ood_accuracy(outputs, g.labels, val_nodes);
      rec.test_metric = test_nodes.empty() ? 0.0 : ood_accuracy(outputs, g.labels, test_nodes);
    }
    rec.invariant_variance = invariant_variance(reps, g.labels, diag_nodes);
    rec.spurious_norm = spurious_norm(reps, diag_nodes);
  };

  TrainResult res;
  res.summary.config = cfg;
  res.summary.regression = regression;
  std::vector<bool> labeled_full(g.num_nodes, false);
  for (std::size_t i : full.train) labeled_full[i] = true;
  const Rng pair_root(cfg.seed, "train/pairs");
  const Rng sub_root(cfg.seed, "train/subgraph");
  bool have_best = false;
  double last_total = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> seen_warnings;
  auto warn = [&](const std::vector<std::string>& ws) {
    for (const auto& w : ws) {
      bool dup = false;
      for (const auto& s : seen_warnings) dup = dup || s == w;
      if (!dup) seen_warnings.push_back(w);
    }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainingRecord rec;
    rec.epoch = epoch;
    rec.regression = regression;
    try {
      StepGraph sampled;
      const StepGraph* sg = &full;
      std::vector<std::size_t> sub_nodes;
      if (sample_steps) {
        Rng srng = sub_root.child("epoch-" + std::to_string(epoch));
        sub_nodes = srng.sample_without_replacement(g.num_nodes, cfg.subgraph);
        sampled.owned = induced_subgraph(g, sub_nodes);
        sampled.build(sampled.owned, theory);
        if (lra) sampled.hops = bounded_shortest_paths(sampled.owned, cfg.hops);
        sg = &sampled;
      }
      if (sg->train.empty()) throw ConfigError("sampled subgraph has no training nodes; raise subgraph");
      const Supervision step_sup = sample_steps ? Supervision::from_graph(*sg->graph, regression) : sup;

      Tape tape;
      std::vector<Var> model_vars, mask_vars;
      const Forward f = forward(tape, *sg, model_vars, mask_vars);

      PairSet pairs;
      const bool penalty_on = oc.kind != ObjectiveKind::Erm && epoch >= oc.warmup && oc.lambda > 0.0;
      if (penalty_on && (oc.kind == ObjectiveKind::Cia || oc.kind == ObjectiveKind::CiaLra)) {
        Rng prng = pair_root.child("epoch-" + std::to_string(epoch));
        const Graph& sgg = *sg->graph;
        if (oc.kind == ObjectiveKind::Cia) {
          pairs = build_cia_pairs(sgg, sg->part, oc.pair_budget, prng);
        } else {
          std::vector<bool> labeled(sgg.num_nodes, false);
          for (std::size_t i : sg->train) labeled[i] = true;
          NeighborhoodProfile profile;
          if (f.edge_weights) {
            const NormalizedAdjacency masked =
                build_normalized(*sg->ctx.pattern, f.edge_weights->value().values());
            profile = neighborhood_label_distribution(masked.row_norm_a, sgg.labels, sgg.num_classes, cfg.layers,
                                                      labeled);
          } else {
            profile = neighborhood_label_distribution(*sg->ctx.row_norm_a, sgg.labels, sgg.num_classes, cfg.layers,
                                                      labeled);
          }
          pairs = build_cia_lra_pairs(sgg, profile, *sg->hops, oc, labeled, prng);
        }
        warn(pairs.warnings);
      }
      const LossParts loss = total_loss(oc, f.outputs, f.reps, step_sup, sg->train, sg->part, &pairs, epoch);
      rec.erm = loss.erm.value().item();
      rec.penalty = loss.penalty.value().item();
      rec.total = loss.total.value().item();
      if (!std::isfinite(rec.total)) throw DivergenceError("loss is not finite");

      if (sample_steps) {
        Tape eval_tape;
        std::vector<Var> mvs, kvs;
        const Forward ef = forward(eval_tape, full, mvs, kvs);
        evaluate(ef.outputs.value(), ef.reps.value(), rec);
      } else {
        evaluate(f.outputs.value(), f.reps.value(), rec);
      }

      // Model selection on the parameters that produced this record.
      const bool better = !have_best || (regression ? rec.val_metric < res.summary.best_val
                                                    : rec.val_metric > res.summary.best_val);
      if (better) {
        have_best = true;
        res.summary.best_epoch = epoch;
        res.summary.best_val = rec.val_metric;
        res.summary.test_at_best = rec.test_metric;
        if (theory) {
          res.theory = TheoryGnnParams::unflatten(tensor_scalars(theory_params), cfg.layers + 1);
        } else {
          res.model = *model;
          res.mask = mask;
        }
      }

      tape.backward(loss.total);
      std::vector<Tensor> grads;
      for (const Var& v : model_vars) grads.push_back(v.grad());
      std::vector<Tensor> mask_grads;
      for (const Var& v : mask_vars) mask_grads.push_back(v.grad());
      check_finite_grads(grads, model_names);
      check_finite_grads(mask_grads, mask_names);
      model_opt.step(model_ptrs, grads, model_names);
      if (mask) mask_opt.step(mask_ptrs, mask_grads, mask_names);
      last_total = rec.total;
    } catch (const DivergenceError& e) {
      res.summary.warnings = seen_warnings;
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (" + e.what() +
                            "); last finite total loss " + format_double(last_total));
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.records.push_back(rec);
    if (sink) sink(rec);
  }
  res.summary.epochs_run = res.records.size();
  res.summary.final_record = res.records.back();
  res.summary.warnings = seen_warnings;
  return res;
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

}  // namespace

TrainSummary run_training(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.dataset.empty()) throw ConfigError("no dataset directory given");
  const Graph g = read_dataset(cfg.dataset);
  return run_training(cfg, g, read_dataset_task(cfg.dataset) == "regression");
}

TrainSummary run_training(const RunConfig& cfg, const Graph& g, bool regression) {
  cfg.validate();
  if (cfg.out.empty()) throw ConfigError("no output directory given");
  fs::create_directories(cfg.out);
  std::ofstream records(cfg.out / "records.jsonl", std::ios::binary);
  if (!records) throw ConfigError("cannot write " + (cfg.out / "records.jsonl").string());
  auto sink = [&](const TrainingRecord& r) { records << r.to_json() << '\n' << std::flush; };
  const TrainResult res = train(cfg, g, regression, sink);
  write_file(cfg.out / "summary.json", res.summary.to_json());
  std::string ck;
  if (res.theory) {
    ck = theory_params_to_json(*res.theory);
  } else {
    Checkpoint c;
    c.model = *res.model;
    c.mask = res.mask;
    c.epoch = static_cast<long long>(res.summary.best_epoch);
    ck = checkpoint_to_json(c);
  }
  write_file(cfg.out / "checkpoint.json", ck);
  write_file(cfg.out / "config.kv", to_kv(cfg).serialize());
  return res.summary;
}

std::string records_to_tsv(const std::vector<TrainingRecord>& records) {
  const bool reg = !records.empty() && records.front().regression;
  const std::string m = reg ? "mse" : "acc";
  std::ostringstream out;
  out << "epoch\term\tpenalty\ttotal\ttrain_" << m << "\tval_" << m << "\ttest_" << m
      << "\tinvariant_variance\tspurious_norm\n";
  for (const auto& r : records) {
    out << r.epoch << '\t' << format_double(r.erm) << '\t' << format_double(r.penalty) << '\t'
        << format_double(r.total) << '\t' << format_double(r.train_metric) << '\t' << format_double(r.val_metric)
        << '\t' << format_double(r.test_metric) << '\t' << format_double(r.invariant_variance) << '\t'
        << format_double(r.spurious_norm) << '\n';
  }
  return out.str();
}

std::vector<TrainingRecord> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<TrainingRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      TrainingRecord r;
      r.regression = j.contains("train_mse");
      const std::string m = r.regression ? "mse" : "acc";
      r.epoch = j.at("epoch").get<std::size_t>();
      r.erm = j.at("erm").get<double>();
      r.penalty = j.at("penalty").get<double>();
      r.total = j.at("total").get<double>();
      r.train_metric = j.at("train_" + m).get<double>();
      r.val_metric = j.at("val_" + m).get<double>();
      r.test_metric = j.at("test_" + m).get<double>();
      r.invariant_variance = j.at("invariant_variance").get<double>();
      r.spurious_norm = j.at("spurious_norm").get<double>();
      if (j.contains("wall_ms")) r.wall_ms = j.at("wall_ms").get<double>();
      out.push_back(r);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace goodlab
