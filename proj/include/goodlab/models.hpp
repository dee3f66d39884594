#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "goodlab/autodiff.hpp"
#include "goodlab/graph.hpp"
#include "goodlab/rng.hpp"

namespace goodlab {

// ---------------------------------------------------------------------------
// Analyzed linear GNN on scalar features (X1, X2).
//
// Each of the L-1 lower layers updates both branches independently:
//   H <- neighbor * (A~ - I) H + self * H
// so (1, 1) is one A~ step and (0, 1) leaves the branch unchanged. The output is
// H1 * theta1 + H2 * theta2.
struct LayerMix {
  double inv_neighbor = 0.0;
  double inv_self = 1.0;
  double sp_neighbor = 0.0;
  double sp_self = 1.0;
};

struct TheoryGnnParams {
  double theta1 = 0.0;
  double theta2 = 0.0;
  std::vector<LayerMix> layers;  // L - 1 entries

  std::size_t depth() const { return layers.size() + 1; }
  std::size_t num_scalars() const { return 2 + 4 * layers.size(); }
  // theta1, theta2, then per layer (inv_neighbor, inv_self, sp_neighbor, sp_self).
  std::vector<double> flatten() const;
  static TheoryGnnParams unflatten(const std::vector<double>& v, std::size_t depth);
  static std::vector<std::string> scalar_names(std::size_t depth);
};

// Invariant optimum for causal depth k: k propagation layers on the invariant
// branch, theta1 = 1, theta2 = 0. Requires 1 <= k <= L - 1.
TheoryGnnParams theory_optimal_params(std::size_t k, std::size_t depth);
// Lower layers of the spurious stationary family: s propagation layers on the
// invariant branch, identity on the spurious branch.
TheoryGnnParams theory_spurious_family(std::size_t s, std::size_t depth, double theta1, double theta2);

// (A~ - I) as a constant CSR matrix.
CsrPtr tilde_minus_identity(const NormalizedAdjacency& adj);

struct TheoryForward {
  std::vector<double> h_inv, h_sp, prediction;
};
TheoryForward theory_gnn_forward(const TheoryGnnParams& p, const NormalizedAdjacency& adj,
                                 const std::vector<double>& x1, const std::vector<double>& x2);

// Tape version; `scalars` follow TheoryGnnParams::flatten order.
struct TheoryTapeForward {
  Var h_inv, h_sp, prediction;  // N x 1
};
TheoryTapeForward theory_gnn_forward(Tape& tape, const std::vector<Var>& scalars, const CsrPtr& tilde_minus_i,
                                     Var x1, Var x2);

// ---------------------------------------------------------------------------
// Message-passing networks.
enum class Aggregator { Gcn, Mean, Attention };
enum class Activation { Relu, Identity };
std::string to_string(Aggregator a);
Aggregator parse_aggregator(const std::string& s);

struct MpnnConfig {
  Aggregator aggregator = Aggregator::Gcn;
  std::size_t in_dim = 0;
  std::size_t hidden = 64;
  std::size_t num_layers = 3;
  std::size_t num_classes = 0;  // 0: no head (encoder only)
  Activation activation = Activation::Relu;
  bool layer_bias = true;
  // 0: linear head on the last layer output; otherwise one hidden ReLU layer.
  std::size_t head_hidden = 0;
  // First layer maps input halves to hidden halves only (block diagonal).
  bool split_input = false;
  double attention_slope = 0.2;
  double dropout = 0.0;  // on hidden layer inputs, only when a dropout stream is passed

  void validate() const;
};

struct MpnnParams {
  MpnnConfig config;
  std::vector<Tensor> weights, biases;        // per layer
  std::vector<Tensor> att_src, att_dst;       // per layer (out x 1), attention only
  std::vector<Tensor> head_weights, head_biases;
  Tensor split_mask;                          // first-layer mask when split_input

  static MpnnParams init(const MpnnConfig& cfg, Rng& rng);
  // Every trainable tensor, in a fixed order, with stable names.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> names() const;
};

// Graph structure shared by every forward on one graph.
struct GraphContext {
  PatternPtr pattern;
  CsrPtr plain;   // A structure
  CsrPtr loop;    // A + I structure
  CsrPtr tilde_a;
  CsrPtr row_norm_a;
  CsrPtr closed_mean;  // row-normalized A + I
  std::vector<std::size_t> entry_row;       // row index of each plain entry
  std::vector<std::size_t> loop_entry_row;  // row index of each loop entry
  std::vector<std::size_t> loop_slot;       // edge index of each loop entry, num_edges on the diagonal
  std::vector<std::size_t> edge_u, edge_v;

  static GraphContext build(const Graph& g);
};

struct MpnnVars {
  std::vector<Var> tensors;  // same order as MpnnParams::tensors()
};
MpnnVars bind(Tape& tape, const MpnnParams& p);

struct MpnnOutput {
  Var representation;  // last message-passing layer output
  Var logits;          // equals representation when there is no head
};

// edge_weights: optional E x 1 soft mask applied to A before normalization.
MpnnOutput mpnn_forward(const MpnnParams& p, const MpnnVars& vars, const GraphContext& ctx, Var x,
                        std::optional<Var> edge_weights = std::nullopt, Rng* dropout_rng = nullptr);

// ---------------------------------------------------------------------------
// Soft edge mask M_ij = norm(phi(i) . phi(j)) from an independent encoder.
enum class MaskMode { Sigmoid, MinMax };
std::string to_string(MaskMode m);
MaskMode parse_mask_mode(const std::string& s);

inline constexpr double kMaskFloor = 1e-6;

struct EdgeMaskParams {
  MpnnParams encoder;
  MaskMode mode = MaskMode::Sigmoid;

  static EdgeMaskParams init(const MpnnConfig& main_cfg, MaskMode mode, Rng& rng);
};

// E x 1 weights in canonical edge order.
Var edge_mask_weights(const EdgeMaskParams& p, const MpnnVars& vars, const GraphContext& ctx, Var x);

}  // namespace goodlab
