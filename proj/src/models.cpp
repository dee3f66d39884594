#include "goodlab/models.hpp"

#include <cmath>

#include "goodlab/errors.hpp"

namespace goodlab {

std::vector<double> TheoryGnnParams::flatten() const {
  std::vector<double> v{theta1, theta2};
  for (const auto& l : layers) {
    v.push_back(l.inv_neighbor);
    v.push_back(l.inv_self);
    v.push_back(l.sp_neighbor);
    v.push_back(l.sp_self);
  }
  return v;
}

TheoryGnnParams TheoryGnnParams::unflatten(const std::vector<double>& v, std::size_t depth) {
  if (depth < 1 || v.size() != 2 + 4 * (depth - 1)) {
    throw ContractError("TheoryGnnParams::unflatten: " + std::to_string(v.size()) + " scalars for depth " +
                        std::to_string(depth));
  }
  TheoryGnnParams p;
  p.theta1 = v[0];
  p.theta2 = v[1];
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    p.layers.push_back({v[2 + 4 * l], v[3 + 4 * l], v[4 + 4 * l], v[5 + 4 * l]});
  }
  return p;
}

std::vector<std::string> TheoryGnnParams::scalar_names(std::size_t depth) {
  std::vector<std::string> n{"theta1", "theta2"};
  for (std::size_t l = 1; l < depth; ++l) {
    const std::string s = "(" + std::to_string(l) + ")";
    n.push_back("inv_neighbor" + s);
    n.push_back("inv_self" + s);
    n.push_back("sp_neighbor" + s);
    n.push_back("sp_self" + s);
  }
  return n;
}

TheoryGnnParams theory_optimal_params(std::size_t k, std::size_t depth) {
  if (depth < 2 || k < 1 || k + 1 > depth) {
    throw ContractError("theory_optimal_params: need 1 <= k <= L - 1, got k=" + std::to_string(k) +
                        " L=" + std::to_string(depth));
  }
  TheoryGnnParams p;
  p.theta1 = 1.0;
  p.theta2 = 0.0;
  p.layers.resize(depth - 1);
  for (std::size_t l = 0; l < k; ++l) p.layers[l].inv_neighbor = 1.0;
  return p;
}

TheoryGnnParams theory_spurious_family(std::size_t s, std::size_t depth, double theta1, double theta2) {
  if (depth < 1 || s + 1 > depth) {
    throw ContractError("theory_spurious_family: need s <= L - 1, got s=" + std::to_string(s) +
                        " L=" + std::to_string(depth));
  }
  TheoryGnnParams p;
  p.theta1 = theta1;
  p.theta2 = theta2;
  p.layers.resize(depth - 1);
  for (std::size_t l = 0; l < s; ++l) p.layers[l].inv_neighbor = 1.0;
  return p;
}

CsrPtr tilde_minus_identity(const NormalizedAdjacency& adj) {
  auto m = std::make_shared<CsrMatrix>(adj.tilde_a);
  for (std::size_t i = 0; i < m->rows; ++i)
    for (std::size_t k = m->row_ptr[i]; k < m->row_ptr[i + 1]; ++k)
      if (m->col[k] == i) m->val[k] -= 1.0;
  return m;
}

TheoryForward theory_gnn_forward(const TheoryGnnParams& p, const NormalizedAdjacency& adj,
                                 const std::vector<double>& x1, const std::vector<double>& x2) {
  const std::size_t n = adj.tilde_a.rows;
  if (x1.size() != n || x2.size() != n) throw ContractError("theory_gnn_forward: feature length mismatch");
  const CsrPtr step = tilde_minus_identity(adj);
  auto mix = [&](const std::vector<double>& h, double nb, double self) {
    const Tensor prop = step->multiply(Tensor::column(h));
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = nb * prop[i] + self * h[i];
    return out;
  };
  TheoryForward f{x1, x2, {}};
  for (const auto& l : p.layers) {
    f.h_inv = mix(f.h_inv, l.inv_neighbor, l.inv_self);
    f.h_sp = mix(f.h_sp, l.sp_neighbor, l.sp_self);
  }
  f.prediction.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.prediction[i] = f.h_inv[i] * p.theta1 + f.h_sp[i] * p.theta2;
  return f;
}

TheoryTapeForward theory_gnn_forward(Tape& tape, const std::vector<Var>& s, const CsrPtr& step, Var x1, Var x2) {
  if (s.size() < 2 || (s.size() - 2) % 4 != 0) throw ContractError("theory_gnn_forward: bad scalar count");
  (void)tape;
  Var hi = x1, hs = x2;
  for (std::size_t l = 0; 2 + 4 * l < s.size(); ++l) {
    hi = add(scalar_mul(s[2 + 4 * l], spmm(step, hi)), scalar_mul(s[3 + 4 * l], hi));
    hs = add(scalar_mul(s[4 + 4 * l], spmm(step, hs)), scalar_mul(s[5 + 4 * l], hs));
  }
  const Var pred = add(scalar_mul(s[0], hi), scalar_mul(s[1], hs));
  return {hi, hs, pred};
}

std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::Gcn: return "gcn";
    case Aggregator::Mean: return "mean";
    case Aggregator::Attention: return "gat";
  }
  return "?";
}

Aggregator parse_aggregator(const std::string& s) {
  if (s == "gcn") return Aggregator::Gcn;
  if (s == "mean") return Aggregator::Mean;
  if (s == "gat" || s == "attention") return Aggregator::Attention;
  throw ConfigError("unknown model '" + s + "' (expected gcn|mean|gat)");
}

void MpnnConfig::validate() const {
  if (in_dim == 0) throw ConfigError("model: input dimension is 0");
  if (hidden == 0) throw ConfigError("model: hidden width must be > 0");
  if (num_layers == 0) throw ConfigError("model: need at least one layer");
  if (split_input && (in_dim % 2 != 0 || hidden % 2 != 0)) {
    throw ConfigError("model: split input needs even input and hidden widths");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
}

namespace {
Tensor uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (auto& x : t.values()) x = rng.uniform(-b, b);
  return t;
}
}  // namespace

MpnnParams MpnnParams::init(const MpnnConfig& cfg, Rng& rng) {
  cfg.validate();
  MpnnParams p;
  p.config = cfg;
  std::size_t in = cfg.in_dim;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    p.weights.push_back(uniform_init(in, cfg.hidden, in, rng));
    if (cfg.layer_bias) p.biases.push_back(uniform_init(1, cfg.hidden, in, rng));
    if (cfg.aggregator == Aggregator::Attention) {
      p.att_src.push_back(uniform_init(cfg.hidden, 1, cfg.hidden, rng));
      p.att_dst.push_back(uniform_init(cfg.hidden, 1, cfg.hidden, rng));
    }
    in = cfg.hidden;
  }
  if (cfg.split_input) {
    p.split_mask = Tensor(cfg.in_dim, cfg.hidden);
    for (std::size_t r = 0; r < cfg.in_dim; ++r)
      for (std::size_t c = 0; c < cfg.hidden; ++c)
        p.split_mask(r, c) = ((r < cfg.in_dim / 2) == (c < cfg.hidden / 2)) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < p.split_mask.size(); ++i) p.weights[0][i] *= p.split_mask[i];
  }
  if (cfg.num_classes > 0) {
    if (cfg.head_hidden > 0) {
      p.head_weights.push_back(uniform_init(cfg.hidden, cfg.head_hidden, cfg.hidden, rng));
      p.head_biases.push_back(uniform_init(1, cfg.head_hidden, cfg.hidden, rng));
      p.head_weights.push_back(uniform_init(cfg.head_hidden, cfg.num_classes, cfg.head_hidden, rng));
      p.head_biases.push_back(uniform_init(1, cfg.num_classes, cfg.head_hidden, rng));
    } else {
      p.head_weights.push_back(uniform_init(cfg.hidden, cfg.num_classes, cfg.hidden, rng));
      p.head_biases.push_back(uniform_init(1, cfg.num_classes, cfg.hidden, rng));
    }
  }
  return p;
}

std::vector<Tensor*> MpnnParams::tensors() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(&weights[l]);
    if (!biases.empty()) out.push_back(&biases[l]);
    if (!att_src.empty()) {
      out.push_back(&att_src[l]);
      out.push_back(&att_dst[l]);
    }
  }
  for (std::size_t h = 0; h < head_weights.size(); ++h) {
    out.push_back(&head_weights[h]);
    out.push_back(&head_biases[h]);
  }
  return out;
}

std::vector<const Tensor*> MpnnParams::tensors() const {
  auto mut = const_cast<MpnnParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> MpnnParams::names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const std::string s = std::to_string(l);
    out.push_back("layer" + s + ".weight");
    if (!biases.empty()) out.push_back("layer" + s + ".bias");
    if (!att_src.empty()) {
      out.push_back("layer" + s + ".att_src");
      out.push_back("layer" + s + ".att_dst");
    }
  }
  for (std::size_t h = 0; h < head_weights.size(); ++h) {
    out.push_back("head" + std::to_string(h) + ".weight");
    out.push_back("head" + std::to_string(h) + ".bias");
  }
  return out;
}

GraphContext GraphContext::build(const Graph& g) {
  GraphContext ctx;
  auto pattern = std::make_shared<AdjacencyPattern>(AdjacencyPattern::from_graph(g));
  const NormalizedAdjacency adj = build_normalized(*pattern);
  ctx.pattern = pattern;
  ctx.plain = plain_structure(*pattern);
  ctx.loop = loop_structure(*pattern);
  ctx.tilde_a = std::make_shared<CsrMatrix>(adj.tilde_a);
  ctx.row_norm_a = std::make_shared<CsrMatrix>(adj.row_norm_a);
  for (std::size_t i = 0; i < pattern->num_nodes; ++i)
    for (std::size_t k = pattern->row_ptr[i]; k < pattern->row_ptr[i + 1]; ++k) ctx.entry_row.push_back(i);
  auto closed = std::make_shared<CsrMatrix>(*ctx.loop);
  for (std::size_t i = 0; i < pattern->num_nodes; ++i) {
    const std::size_t lo = pattern->loop_row_ptr[i], hi = pattern->loop_row_ptr[i + 1];
    for (std::size_t k = lo; k < hi; ++k) {
      closed->val[k] = 1.0 / static_cast<double>(hi - lo);
      ctx.loop_entry_row.push_back(i);
      const std::size_t e = pattern->loop_edge_of[k];
      ctx.loop_slot.push_back(e == AdjacencyPattern::kSelf ? pattern->num_edges : e);
    }
  }
  ctx.closed_mean = closed;
  for (const auto& [u, v] : g.edges) {
    ctx.edge_u.push_back(u);
    ctx.edge_v.push_back(v);
  }
  return ctx;
}

MpnnVars bind(Tape& tape, const MpnnParams& p) {
  MpnnVars v;
  for (const Tensor* t : p.tensors()) v.tensors.push_back(tape.leaf(*t));
  return v;
}

namespace {

struct LayerVars {
  Var weight;
  std::optional<Var> bias, att_src, att_dst;
};

// Edge weights spread over the loop structure, 1 on the diagonal.
Var loop_weights(const GraphContext& ctx, Var edge_weights) {
  const Var with_self = concat_rows({edge_weights, edge_weights.tape->constant(Tensor(1, 1, 1.0))});
  return gather_rows(with_self, ctx.loop_slot);
}

Var aggregate(const MpnnParams& p, const GraphContext& ctx, const LayerVars& lv, Var hw,
              const std::optional<Var>& edge_weights) {
  switch (p.config.aggregator) {
    case Aggregator::Gcn:
      if (!edge_weights) return spmm(ctx.tilde_a, hw);
      return spmm_values(ctx.loop, normalized_adjacency_values(ctx.pattern, *edge_weights), hw);
    case Aggregator::Mean:
      if (!edge_weights) return spmm(ctx.closed_mean, hw);
      return spmm_values(ctx.loop, row_normalize_entries(ctx.loop, loop_weights(ctx, *edge_weights)), hw);
    case Aggregator::Attention: {
      // Closed neighborhood, so isolated nodes keep their own features.
      const Var src = matmul(hw, *lv.att_src);  // N x 1
      const Var dst = matmul(hw, *lv.att_dst);
      const Var scores = leaky_relu(add(gather_rows(src, ctx.loop_entry_row), gather_rows(dst, ctx.loop->col)),
                                    p.config.attention_slope);
      Var alpha = segment_softmax(ctx.loop, scores);
      if (edge_weights) alpha = row_normalize_entries(ctx.loop, hadamard(alpha, loop_weights(ctx, *edge_weights)));
      return spmm_values(ctx.loop, alpha, hw);
    }
  }
  throw ContractError("unknown aggregator");
}

Var dropout(Var h, double rate, Rng& rng) {
  Tensor mask(h.rows(), h.cols());
  const double keep = 1.0 - rate;
  for (auto& m : mask.values()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return hadamard(h, h.tape->constant(std::move(mask)));
}

}  // namespace

MpnnOutput mpnn_forward(const MpnnParams& p, const MpnnVars& vars, const GraphContext& ctx, Var x,
                        std::optional<Var> edge_weights, Rng* dropout_rng) {
  const MpnnConfig& cfg = p.config;
  if (x.cols() != cfg.in_dim) {
    throw ContractError("mpnn_forward: input " + x.value().shape_string() + " but model expects " +
                        std::to_string(cfg.in_dim) + " features");
  }
  if (x.rows() != ctx.pattern->num_nodes) throw ContractError("mpnn_forward: node count mismatch with graph");
  if (vars.tensors.size() != p.tensors().size()) throw ContractError("mpnn_forward: bound variables do not match");
  if (edge_weights && (edge_weights->rows() != ctx.pattern->num_edges || edge_weights->cols() != 1)) {
    throw ContractError("mpnn_forward: edge weights " + edge_weights->value().shape_string() + " for " +
                        std::to_string(ctx.pattern->num_edges) + " edges");
  }
  Tape& tape = *x.tape;
  std::size_t next = 0;
  Var h = x;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    LayerVars lv{vars.tensors[next++], {}, {}, {}};
    if (cfg.layer_bias) lv.bias = vars.tensors[next++];
    if (cfg.aggregator == Aggregator::Attention) {
      lv.att_src = vars.tensors[next++];
      lv.att_dst = vars.tensors[next++];
    }
    Var w = lv.weight;
    if (l == 0 && cfg.split_input) w = hadamard(w, tape.constant(p.split_mask));
    if (l > 0 && dropout_rng && cfg.dropout > 0.0) h = dropout(h, cfg.dropout, *dropout_rng);
    Var z = aggregate(p, ctx, lv, matmul(h, w), edge_weights);
    if (lv.bias) z = add_row_bias(z, *lv.bias);
    h = cfg.activation == Activation::Relu ? relu(z) : z;
  }
  MpnnOutput out{h, h};
  if (cfg.num_classes > 0) {
    Var z = h;
    const std::size_t heads = p.head_weights.size();
    for (std::size_t k = 0; k < heads; ++k) {
      const Var w = vars.tensors[next++];
      const Var b = vars.tensors[next++];
      z = add_row_bias(matmul(z, w), b);
      if (k + 1 < heads) z = relu(z);
    }
    out.logits = z;
  }
  return out;
}

std::string to_string(MaskMode m) { return m == MaskMode::Sigmoid ? "sigmoid" : "minmax"; }

MaskMode parse_mask_mode(const std::string& s) {
  if (s == "sigmoid") return MaskMode::Sigmoid;
  if (s == "minmax") return MaskMode::MinMax;
  throw ConfigError("unknown mask mode '" + s + "' (expected sigmoid|minmax)");
}

EdgeMaskParams EdgeMaskParams::init(const MpnnConfig& main_cfg, MaskMode mode, Rng& rng) {
  MpnnConfig cfg = main_cfg;
  cfg.num_classes = 0;
  cfg.split_input = false;
  cfg.head_hidden = 0;
  return {MpnnParams::init(cfg, rng), mode};
}

Var edge_mask_weights(const EdgeMaskParams& p, const MpnnVars& vars, const GraphContext& ctx, Var x) {
  const Var phi = mpnn_forward(p.encoder, vars, ctx, x).representation;
  if (ctx.edge_u.empty()) return x.tape->constant(Tensor(0, 1));
  const Var dots = row_sum(hadamard(gather_rows(phi, ctx.edge_u), gather_rows(phi, ctx.edge_v)));
  if (p.mode == MaskMode::Sigmoid) return clamp(sigmoid(dots), kMaskFloor, 1.0 - kMaskFloor);
  return clamp(minmax_normalize(dots), kMaskFloor, 1.0);
}

}  // namespace goodlab
