#pragma once

#include <map>
#include <string>
#include <vector>

#include "goodlab/autodiff.hpp"
#include "goodlab/graph.hpp"
#include "goodlab/rng.hpp"

namespace goodlab {

enum class ObjectiveKind { Erm, Irm, Vrex, Cia, CiaLra };
std::string to_string(ObjectiveKind k);
ObjectiveKind parse_objective(const std::string& s);

// Factor switches of the local alignment weight
//   w = Norm( r_diff / (d * max(r_same, floor)) ).
struct LraSwitches {
  bool use_r_diff = true;
  bool use_inv_r_same = true;
  bool use_inv_d = true;
  bool use_mask = true;
  bool r_same_in_numerator = false;
};

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::Erm;
  double lambda = 0.05;
  std::size_t hops = 4;
  std::size_t pair_budget = 256;
  LraSwitches switches;
  std::size_t warmup = 1;
  double r_same_floor = 1e-3;
  bool regression = false;

  void validate() const;
};

// env id -> train nodes, ascending. Nodes with env < 0 are left out.
using EnvPartition = std::map<int, std::vector<std::size_t>>;
EnvPartition make_env_partition(const Graph& g);

struct AlignedPair {
  std::size_t i = 0, j = 0;
  double weight = 1.0;
  std::size_t distance = 0;  // hop distance (local mode), 0 otherwise
};

struct PairSet {
  enum class Mode { CrossEnv, Local };
  Mode mode = Mode::CrossEnv;
  std::vector<std::vector<AlignedPair>> per_class;
  std::vector<std::string> warnings;

  std::size_t size() const;
};

PairSet build_cia_pairs(const Graph& g, const EnvPartition& part, std::size_t budget, Rng& rng);

double lra_raw_weight(const RatioDiscrepancy& r, std::size_t distance, const LraSwitches& sw, double r_same_floor);

// Same-class pairs of labeled nodes within the hop table, subsampled to the
// budget per class, weighted and min-max normalized per class. Never reads
// environment ids. `labeled` marks nodes whose labels may be used.
PairSet build_cia_lra_pairs(const Graph& g, const NeighborhoodProfile& profile, const HopDistanceTable& hops,
                            const ObjectiveConfig& cfg, const std::vector<bool>& labeled, Rng& rng);

// Per-class min-max normalization in place; a class whose raw weights are all
// equal gets weight 1 everywhere.
void minmax_normalize_weights(std::vector<AlignedPair>& pairs);

// Supervision for the loss: class labels, or regression targets.
struct Supervision {
  std::vector<int> labels;
  std::vector<double> values;
  bool regression = false;

  static Supervision from_graph(const Graph& g, bool regression);
};

Var erm_loss(Var outputs, const Supervision& sup, const std::vector<std::size_t>& nodes);
Var vrex_penalty(const std::vector<Var>& env_losses);
// d/dw at w = 1 of the loss with outputs scaled by w, as a differentiable 1x1.
Var irm_dummy_gradient(Var outputs, const Supervision& sup, const std::vector<std::size_t>& nodes);
Var irmv1_penalty(Var outputs, const Supervision& sup, const EnvPartition& part);
Var alignment_loss(Var representations, const PairSet& pairs);

struct LossParts {
  Var total, erm, penalty;
  bool penalty_active = false;
};

// ERM over train_nodes + lambda * penalty once epoch >= warmup. `pairs` is
// required for cia and cia_lra.
LossParts total_loss(const ObjectiveConfig& cfg, Var outputs, Var representations, const Supervision& sup,
                     const std::vector<std::size_t>& train_nodes, const EnvPartition& part, const PairSet* pairs,
                     std::size_t epoch);

}  // namespace goodlab
