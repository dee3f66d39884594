#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "goodlab/graph.hpp"
#include "goodlab/kvconfig.hpp"
#include "goodlab/models.hpp"
#include "goodlab/objectives.hpp"

namespace goodlab {

enum class ModelKind { TheoryLinear, Gcn, Gat };
std::string to_string(ModelKind m);
ModelKind parse_model(const std::string& s);

struct RunConfig {
  std::filesystem::path dataset;
  ModelKind model = ModelKind::Gcn;
  ObjectiveKind objective = ObjectiveKind::Erm;
  double lambda = 0.05;
  std::size_t hops = 4;
  std::size_t epochs = 200;
  double lr = 1e-2;
  double mask_lr = 1e-3;
  std::size_t pair_budget = 256;
  std::size_t subgraph = 0;  // nodes per step; 0 = whole graph up to 5000 nodes
  std::uint64_t seed = 0;
  LraSwitches switches;
  std::size_t warmup = 1;
  double r_same_floor = 1e-3;
  // Architecture. hidden = 0 means the input width.
  std::size_t layers = 1;
  std::size_t hidden = 0;
  bool relu = false;
  bool layer_bias = false;
  bool split = true;  // invariant/spurious halves stay separate in the first layer
  MaskMode mask_mode = MaskMode::Sigmoid;
  std::filesystem::path out;

  void validate() const;
  ObjectiveConfig objective_config(bool regression) const;
};

// Keys: every RunConfig field by its flag name with '-' replaced by '_'.
RunConfig run_config_from_kv(const KvConfig& kv);
KvConfig to_kv(const RunConfig& cfg);
const std::vector<std::string>& run_config_keys();

struct TrainingRecord {
  std::size_t epoch = 0;
  double erm = 0.0, penalty = 0.0, total = 0.0;
  // Accuracy for classification, mean squared error for regression.
  double train_metric = 0.0, val_metric = 0.0, test_metric = 0.0;
  double invariant_variance = 0.0;
  double spurious_norm = 0.0;
  double wall_ms = 0.0;
  bool regression = false;

  // wall_ms is left out when include_time is false.
  std::string to_json(bool include_time = true) const;
};

struct TrainSummary {
  RunConfig config;
  bool regression = false;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  double test_at_best = 0.0;
  TrainingRecord final_record;
  std::vector<std::string> warnings;

  // Byte-deterministic: no wall times, no paths other than the config's.
  std::string to_json() const;
};

struct TrainResult {
  std::vector<TrainingRecord> records;
  TrainSummary summary;
  std::optional<MpnnParams> model;  // parameters at the best epoch
  std::optional<EdgeMaskParams> mask;
  std::optional<TheoryGnnParams> theory;
};

using RecordSink = std::function<void(const TrainingRecord&)>;

// Full-batch training loop. Every record is passed to `sink` as soon as it is
// complete. A non-finite loss throws DivergenceError after the last finite
// record was emitted.
TrainResult train(const RunConfig& cfg, const Graph& g, bool regression, const RecordSink& sink = {});

// Reads the dataset, trains, writes records.jsonl, summary.json and
// checkpoint.json under cfg.out.
TrainSummary run_training(const RunConfig& cfg);
// Same on an already loaded dataset.
TrainSummary run_training(const RunConfig& cfg, const Graph& g, bool regression);

// Figure data: one TSV row per record.
std::string records_to_tsv(const std::vector<TrainingRecord>& records);
std::vector<TrainingRecord> read_records(const std::filesystem::path& jsonl);

}  // namespace goodlab
