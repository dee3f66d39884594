#include <gtest/gtest.h>

#include "goodlab/checkpoint.hpp"
#include "goodlab/metrics.hpp"
#include "goodlab/models.hpp"
#include "goodlab/objectives.hpp"
#include "goodlab/optim.hpp"
#include "goodlab/synth.hpp"
#include "helpers.hpp"

using namespace goodlab;
using namespace goodlab::testing;

namespace {

Eigen::VectorXd to_vec(const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

MpnnConfig small_config(Aggregator agg, std::size_t in_dim, std::size_t classes) {
  MpnnConfig c;
  c.aggregator = agg;
  c.in_dim = in_dim;
  c.hidden = 4;
  c.num_layers = 2;
  c.num_classes = classes;
  return c;
}

Tensor forward_logits(const MpnnParams& p, const Graph& g, std::optional<Tensor> ew = std::nullopt) {
  Tape tape;
  const GraphContext ctx = GraphContext::build(g);
  const MpnnVars v = bind(tape, p);
  std::optional<Var> w;
  if (ew) w = tape.constant(*ew);
  return mpnn_forward(p, v, ctx, tape.constant(g.features), w).logits.value();
}

}  // namespace

TEST(TheoryGnn, InvariantOptimumReproducesNoiselessTarget) {
  ScmConfig cfg;
  cfg.noise_scale = 0.0;
  cfg.nodes_per_env = 60;
  cfg.edge_probability = 0.08;
  Rng rng(2, "test/theory");
  const auto env = sample_scm_environment(cfg, 0, 1.0, rng);
  for (std::size_t depth : {2u, 3u}) {
    const auto out = theory_gnn_forward(theory_optimal_params(1, depth), env.adj, env.x1, env.x2);
    for (std::size_t i = 0; i < env.y.size(); ++i) EXPECT_NEAR(out.prediction[i], env.y[i], 1e-13);
  }
}

TEST(TheoryGnn, UnitMixesDegenerateToPlainPropagation) {
  const Graph g = random_graph(25, 0.15, 2, 4);
  const auto adj = build_normalized(g);
  std::vector<double> x1(25), x2(25);
  for (std::size_t i = 0; i < 25; ++i) {
    x1[i] = std::sin(1.0 + i);
    x2[i] = std::cos(2.0 + i);
  }
  const Eigen::MatrixXd t = dense_tilde(g);
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    TheoryGnnParams p;
    p.theta1 = 0.7;
    p.theta2 = -1.3;
    p.layers.assign(depth - 1, LayerMix{1.0, 1.0, 1.0, 1.0});
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(25, 25);
    for (std::size_t l = 1; l < depth; ++l) power = t * power;
    const Eigen::VectorXd expected = power * (0.7 * to_vec(x1) - 1.3 * to_vec(x2));
    const auto out = theory_gnn_forward(p, adj, x1, x2);
    EXPECT_LT((to_vec(out.prediction) - expected).cwiseAbs().maxCoeff(), 1e-12) << "depth " << depth;
  }
}

TEST(TheoryGnn, ZeroHeadGivesZeroPrediction) {
  const Graph g = random_graph(10, 0.3, 2, 5);
  TheoryGnnParams p = theory_spurious_family(1, 3, 0.0, 0.0);
  const auto out = theory_gnn_forward(p, build_normalized(g), std::vector<double>(10, 1.5), std::vector<double>(10, -2.0));
  for (double v : out.prediction) EXPECT_EQ(v, 0.0);
}

TEST(TheoryGnn, TapeForwardMatchesPlainForward) {
  const Graph g = random_graph(15, 0.25, 2, 6);
  const auto adj = build_normalized(g);
  std::vector<double> x1(15), x2(15);
  for (std::size_t i = 0; i < 15; ++i) {
    x1[i] = 0.1 * i;
    x2[i] = 1.0 - 0.05 * i * i;
  }
  TheoryGnnParams p = theory_spurious_family(2, 3, 0.4, 0.9);
  p.layers[0].sp_neighbor = 0.3;
  const auto plain = theory_gnn_forward(p, adj, x1, x2);
  Tape tape;
  std::vector<Var> scalars;
  for (double v : p.flatten()) scalars.push_back(tape.leaf(Tensor::scalar(v)));
  const auto tf = theory_gnn_forward(tape, scalars, tilde_minus_identity(adj), tape.constant(Tensor::column(x1)),
                                     tape.constant(Tensor::column(x2)));
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(tf.prediction.value()[i], plain.prediction[i], 1e-13);
  EXPECT_EQ(TheoryGnnParams::unflatten(p.flatten(), 3).flatten(), p.flatten());
}

TEST(Mpnn, ZeroWeightsGiveUniformSoftmax) {
  const Graph g = random_graph(12, 0.3, 3, 7, 4);
  for (auto agg : {Aggregator::Gcn, Aggregator::Attention}) {
    Rng rng(1, "init");
    MpnnParams p = MpnnParams::init(small_config(agg, 4, 3), rng);
    for (Tensor* t : p.tensors()) t->fill(0.0);
    Tape tape;
    const Var z = tape.constant(forward_logits(p, g));
    for (double v : row_softmax(z).value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(Mpnn, PermutationEquivariance) {
  const Graph g = random_graph(14, 0.25, 3, 8, 4);
  std::vector<std::size_t> perm(14);
  for (std::size_t i = 0; i < 14; ++i) perm[i] = (5 * i + 3) % 14;  // new id of node i
  Graph h = g;
  std::vector<Edge> edges;
  for (const auto& [u, v] : g.edges) edges.emplace_back(perm[u], perm[v]);
  h.edges = canonical_edges(edges, 14);
  for (std::size_t i = 0; i < 14; ++i) {
    h.labels[perm[i]] = g.labels[i];
    for (std::size_t d = 0; d < 4; ++d) h.features(perm[i], d) = g.features(i, d);
  }
  for (auto agg : {Aggregator::Gcn, Aggregator::Mean, Aggregator::Attention}) {
    Rng rng(2, "init");
    const MpnnParams p = MpnnParams::init(small_config(agg, 4, 3), rng);
    const Tensor a = forward_logits(p, g), b = forward_logits(p, h);
    for (std::size_t i = 0; i < 14; ++i)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b(perm[i], c), a(i, c), 1e-12);
  }
}

TEST(Mpnn, UniformAttentionIsMeanAggregation) {
  const Graph g = random_graph(20, 0.2, 3, 9, 4);
  Rng rng(3, "init");
  MpnnParams att = MpnnParams::init(small_config(Aggregator::Attention, 4, 3), rng);
  for (auto& a : att.att_src) a.fill(0.0);
  for (auto& a : att.att_dst) a.fill(0.0);
  MpnnParams mean = att;
  mean.config.aggregator = Aggregator::Mean;
  mean.att_src.clear();
  mean.att_dst.clear();
  EXPECT_LT(max_abs_diff(forward_logits(att, g), forward_logits(mean, g)), 1e-10);
  Tensor ew(g.edges.size(), 1);
  for (std::size_t k = 0; k < ew.rows(); ++k) ew[k] = 0.2 + 0.7 * std::abs(std::sin(1.0 + k));
  EXPECT_LT(max_abs_diff(forward_logits(att, g, ew), forward_logits(mean, g, ew)), 1e-10);
}

TEST(Mpnn, IsolatedNodeSeesOnlyItself) {
  Graph g = make_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, {0, 1, 0, 1, 0, 1}, 2, 4);
  for (auto agg : {Aggregator::Gcn, Aggregator::Mean, Aggregator::Attention}) {
    Rng rng(4, "init");
    const MpnnParams p = MpnnParams::init(small_config(agg, 4, 2), rng);
    const Tensor before = forward_logits(p, g);
    Graph h = g;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t d = 0; d < 4; ++d) h.features(i, d) += 3.0;
    const Tensor after = forward_logits(p, h);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(after(5, c), before(5, c));
    Graph solo = make_graph(1, {}, {1}, 2, 4);
    for (std::size_t d = 0; d < 4; ++d) solo.features(0, d) = g.features(5, d);
    const Tensor alone = forward_logits(p, solo);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(alone(0, c), before(5, c), 1e-14);
  }
}

TEST(Mpnn, GradcheckEveryAggregator) {
  const Graph g = random_graph(9, 0.35, 3, 10, 4);
  const GraphContext ctx = GraphContext::build(g);
  for (auto agg : {Aggregator::Gcn, Aggregator::Mean, Aggregator::Attention}) {
    Rng rng(5, "init");
    MpnnConfig cfg = small_config(agg, 4, 3);
    cfg.split_input = true;
    cfg.head_hidden = 3;
    const MpnnParams p = MpnnParams::init(cfg, rng);
    std::vector<Tensor> point;
    for (const Tensor* t : p.tensors()) point.push_back(*t);
    Tensor ew(g.edges.size(), 1);
    for (std::size_t k = 0; k < ew.rows(); ++k) ew[k] = 0.3 + 0.05 * k;
    const double err = gradcheck(
        [&](Tape& tape, const std::vector<Var>& v) {
          const auto out = mpnn_forward(p, MpnnVars{v}, ctx, tape.constant(g.features), tape.constant(ew));
          return cross_entropy_with_logits(out.logits, g.labels);
        },
        point);
    EXPECT_LT(err, 1e-4) << to_string(agg);
  }
}

TEST(Mpnn, FitsNoiselessCsbm) {
  CsbmConfig cc;
  cc.noise_variance = 1e-4;
  cc.p_hm = 0.9;
  cc.seed = 3;
  const Graph g = gen_csbm(cc).graph;
  MpnnConfig cfg;
  cfg.aggregator = Aggregator::Gcn;
  cfg.in_dim = g.feature_dim();
  cfg.hidden = g.feature_dim();
  cfg.num_layers = 1;
  cfg.num_classes = g.num_classes;
  cfg.activation = Activation::Identity;
  Rng rng(6, "init");
  MpnnParams p = MpnnParams::init(cfg, rng);
  const GraphContext ctx = GraphContext::build(g);
  const auto train = g.nodes_in(Split::Train);
  std::vector<int> train_labels;
  for (auto i : train) train_labels.push_back(g.labels[i]);
  Adam adam(AdamHyper{0.05});
  double acc = 0.0;
  std::size_t step = 0;
  for (; step < 200; ++step) {
    Tape tape;
    const MpnnVars v = bind(tape, p);
    const auto out = mpnn_forward(p, v, ctx, tape.constant(g.features));
    acc = ood_accuracy(out.logits.value(), g.labels, train);
    if (acc == 1.0) break;
    tape.backward(cross_entropy_with_logits(gather_rows(out.logits, train), train_labels));
    std::vector<Tensor> grads;
    for (const Var& x : v.tensors) grads.push_back(x.grad());
    adam.step(p.tensors(), grads);
  }
  EXPECT_EQ(acc, 1.0) << "steps " << step;
}

TEST(EdgeMask, ZeroEncoderGivesHalf) {
  const Graph g = random_graph(10, 0.3, 2, 11, 4);
  Rng rng(7, "mask");
  EdgeMaskParams m = EdgeMaskParams::init(small_config(Aggregator::Gcn, 4, 2), MaskMode::Sigmoid, rng);
  for (Tensor* t : m.encoder.tensors()) t->fill(0.0);
  Tape tape;
  const auto w = edge_mask_weights(m, bind(tape, m.encoder), GraphContext::build(g), tape.constant(g.features));
  ASSERT_EQ(w.rows(), g.edges.size());
  for (double v : w.value().values()) EXPECT_EQ(v, 0.5);
}

TEST(EdgeMask, IdenticalEmbeddingsInMinMaxModeGiveOnes) {
  Graph g = random_graph(10, 0.3, 2, 12, 4);
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    for (std::size_t d = 0; d < 4; ++d) g.features(i, d) = 0.5 + d;
  Rng rng(8, "mask");
  MpnnConfig cfg = small_config(Aggregator::Mean, 4, 2);
  const EdgeMaskParams m = EdgeMaskParams::init(cfg, MaskMode::MinMax, rng);
  Tape tape;
  const auto w = edge_mask_weights(m, bind(tape, m.encoder), GraphContext::build(g), tape.constant(g.features));
  for (double v : w.value().values()) EXPECT_EQ(v, 1.0);
}

TEST(EdgeMask, WeightIsSymmetricDotProduct) {
  const Graph g = random_graph(12, 0.3, 2, 13, 4);
  Rng rng(9, "mask");
  const EdgeMaskParams m = EdgeMaskParams::init(small_config(Aggregator::Gcn, 4, 2), MaskMode::Sigmoid, rng);
  Tape tape;
  const GraphContext ctx = GraphContext::build(g);
  const MpnnVars v = bind(tape, m.encoder);
  const Tensor phi = mpnn_forward(m.encoder, v, ctx, tape.constant(g.features)).representation.value();
  const Tensor w = edge_mask_weights(m, v, ctx, tape.constant(g.features)).value();
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    const auto [a, b] = g.edges[k];
    double ab = 0.0, ba = 0.0;
    for (std::size_t d = 0; d < phi.cols(); ++d) {
      ab += phi(a, d) * phi(b, d);
      ba += phi(b, d) * phi(a, d);
    }
    EXPECT_EQ(ab, ba);
    EXPECT_NEAR(w[k], std::clamp(1.0 / (1.0 + std::exp(-ab)), kMaskFloor, 1.0 - kMaskFloor), 1e-15);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(10, "init");
  Checkpoint ck;
  ck.model = MpnnParams::init(small_config(Aggregator::Attention, 4, 3), rng);
  ck.mask = EdgeMaskParams::init(small_config(Aggregator::Gcn, 4, 3), MaskMode::Sigmoid, rng);
  ck.epoch = 17;
  const std::string text = checkpoint_to_json(ck);
  const Checkpoint back = checkpoint_from_json(text);
  EXPECT_EQ(back.epoch, 17);
  const auto a = ck.model.tensors();
  const auto b = back.model.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  EXPECT_EQ(checkpoint_to_json(back), text);
  TheoryGnnParams tp = theory_spurious_family(1, 3, 0.1, 1.0 / 3.0);
  EXPECT_EQ(theory_params_from_json(theory_params_to_json(tp)).flatten(), tp.flatten());
}
