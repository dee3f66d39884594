#include <gtest/gtest.h>

#include <limits>

#include "goodlab/bound.hpp"
#include "goodlab/metrics.hpp"
#include "goodlab/synth.hpp"
#include "helpers.hpp"

using namespace goodlab;
using namespace goodlab::testing;

namespace {

std::vector<std::size_t> iota_nodes(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed, "test/tensor");
  Tensor t(r, c);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace

TEST(Accuracy, PerfectLogits) {
  const Tensor z{{5, 0, 0}, {0, 5, 0}, {0, 0, 5}};
  EXPECT_EQ(ood_accuracy(z, {0, 1, 2}, {0, 1, 2}), 1.0);
}

TEST(Accuracy, UniformLogitsOnUniformLabels) {
  const std::size_t n = 4000;
  Rng rng(1, "labels");
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(4));
  EXPECT_NEAR(ood_accuracy(Tensor(n, 4, 0.0), y, iota_nodes(n)), 0.25, 0.05);
}

TEST(Accuracy, TiesGoToClassZero) {
  const std::vector<int> y{0, 2, 1, 0, 3, 0, 2};
  EXPECT_NEAR(ood_accuracy(Tensor(7, 4, 1.5), y, iota_nodes(7)), 3.0 / 7.0, 1e-15);
}

TEST(Diagnostics, IdenticalRepresentationsHaveNoVariance) {
  EXPECT_NEAR(invariant_variance(Tensor(6, 4, 0.7), {0, 0, 1, 1, 1, 0}, iota_nodes(6)), 0.0, 1e-24);
}

TEST(Diagnostics, ZeroSpuriousHalf) {
  Tensor h = random_tensor(5, 4, 2);
  for (std::size_t i = 0; i < 5; ++i) h(i, 2) = h(i, 3) = 0.0;
  EXPECT_EQ(spurious_norm(h, iota_nodes(5)), 0.0);
}

TEST(Diagnostics, TwoPointClassTraceCovariance) {
  const Tensor h{{0, 0, 9, 9}, {2, 0, -9, 1}};
  EXPECT_EQ(invariant_variance(h, {0, 0}, {0, 1}), 1.0);
}

TEST(Diagnostics, SpuriousNormIsMeanRowNorm) {
  const Tensor h{{0, 0, 3, 4}, {1, 1, 0, 1}};
  EXPECT_EQ(spurious_norm(h, {0, 1}), 3.0);
}

TEST(MarginLoss, PerfectSeparationAtZeroGamma) {
  const Tensor z{{2, 0}, {0, 1}};
  EXPECT_EQ(margin_loss(z, {0, 1}, {0, 1}, 0.0), 0.0);
}

TEST(MarginLoss, InfiniteGamma) {
  const Tensor z{{2, 0}, {0, 1}};
  EXPECT_EQ(margin_loss(z, {0, 1}, {0, 1}, std::numeric_limits<double>::infinity()), 1.0);
}

TEST(MarginLoss, MatchesPerNodeCheck) {
  const Tensor z = random_tensor(50, 4, 3);
  Rng rng(4, "y");
  std::vector<int> y(50);
  for (auto& v : y) v = static_cast<int>(rng.index(4));
  for (double gamma : {0.0, 0.3, 1.0}) {
    double bad = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      double other = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < 4; ++c)
        if (static_cast<int>(c) != y[i]) other = std::max(other, z(i, c));
      bad += z(i, y[i]) <= gamma + other ? 1 : 0;
    }
    EXPECT_EQ(margin_loss(z, y, iota_nodes(50), gamma), bad / 50.0);
  }
}

TEST(Epsilon, SameSetsGiveZero) {
  const Tensor a = random_tensor(7, 3, 5);
  EXPECT_EQ(epsilon_distance(a, a), 0.0);
}

TEST(Epsilon, HandCase) { EXPECT_EQ(epsilon_distance(Tensor{{0, 0}, {1, 0}}, Tensor{{0.5, 0}}), 0.5); }

TEST(Epsilon, MatchesNaiveDoubleLoop) {
  const Tensor a = random_tensor(12, 3, 6), b = random_tensor(9, 3, 7);
  double eps = 0.0;
  for (std::size_t j = 0; j < 9; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 12; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < 3; ++d) s += (a(i, d) - b(j, d)) * (a(i, d) - b(j, d));
      best = std::min(best, std::sqrt(s));
    }
    eps = std::max(eps, best);
  }
  EXPECT_NEAR(epsilon_distance(a, b), eps, 1e-14);
}

TEST(Bound, ZeroShiftGivesZeroShiftTerms) {
  CsbmConfig cfg;
  const auto ds = gen_csbm(cfg);
  const auto train = ds.graph.nodes_in(Split::Train);
  const auto r = bound_terms(ds.means, ds.graph, train, train, BoundConfig{});
  EXPECT_EQ(r.term_b, 0.0);
  EXPECT_EQ(r.term_c, 0.0);
  EXPECT_EQ(r.epsilon, 0.0);
}

TEST(Bound, EqualEnvironmentMeansZeroTermB) {
  CsbmConfig cfg;
  cfg.seed = 4;
  auto ds = gen_csbm(cfg);
  for (auto& m : ds.means.env_means) m = ds.means.env_means[0];
  const auto r = bound_terms(ds.means, ds.graph, ds.graph.nodes_in(Split::Train), ds.graph.nodes_in(Split::Test),
                             BoundConfig{});
  EXPECT_EQ(r.term_b, 0.0);
  EXPECT_GT(r.term_c, 0.0);
}

TEST(Bound, HeterophilyShiftRaisesTermC) {
  CsbmConfig cfg;
  const auto ds = gen_csbm(cfg);
  const Graph& g = ds.graph;
  const auto train = g.nodes_in(Split::Train);
  const Tensor agg = mean_aggregate(g), ratios = neighbor_class_ratios(g);
  const BoundSide tr = bound_side(g, agg, ratios, train);
  double last = 0.0;
  for (double delta : {0.0, 0.1, 0.2, 0.3}) {
    BoundSide te = tr;
    te.p = shift_heterophily(tr.p, tr.labels, delta);
    const auto r = bound_terms(ds.means, tr, te, BoundConfig{});
    if (delta == 0.0) {
      EXPECT_EQ(r.term_c, 0.0);
    } else {
      EXPECT_GT(r.term_c, last) << "delta " << delta;
    }
    last = r.term_c;
  }
}

TEST(Bound, TermCMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CsbmConfig cfg;
    cfg.num_classes = 2;
    cfg.feature_dim = 4;
    cfg.num_envs = 2;
    cfg.nodes_per_class = 5;  // 20 nodes
    cfg.mean_degree = 3.0;
    cfg.seed = seed;
    const auto ds = gen_csbm(cfg);
    const Graph& g = ds.graph;
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < g.num_nodes; ++i) (g.envs[i] == 0 ? train : test).push_back(i);
    const Tensor agg = mean_aggregate(g), ratios = neighbor_class_ratios(g);
    BoundSide te = bound_side(g, agg, ratios, test);
    te.p = shift_heterophily(te.p, te.labels, 0.1 * static_cast<double>(seed % 4));
    const double sigma2 = 0.1 + 0.05 * static_cast<double>(seed);
    const double got = term_c_value(bound_side(g, agg, ratios, train), te, g.num_classes, sigma2);
    EXPECT_NEAR(got, brute_term_c(g, train, test, te.p, sigma2), 1e-10) << "seed " << seed;
  }
}

TEST(Bound, ReportsAnalysisParametersOnly) {
  CsbmConfig cfg;
  const auto ds = gen_csbm(cfg);
  BoundConfig a, b;
  b.alpha = 0.3;
  b.delta = 0.2;
  b.gamma = 1.0;
  const auto ra = bound_terms(ds.means, ds.graph, ds.graph.nodes_in(Split::Train), ds.graph.nodes_in(Split::Test), a);
  const auto rb = bound_terms(ds.means, ds.graph, ds.graph.nodes_in(Split::Train), ds.graph.nodes_in(Split::Test), b);
  EXPECT_EQ(ra.term_a, rb.term_a);
  EXPECT_EQ(ra.term_b, rb.term_b);
  EXPECT_EQ(ra.term_c, rb.term_c);
  EXPECT_NE(rb.to_json().find("\"alpha\": 0.3"), std::string::npos);
}
