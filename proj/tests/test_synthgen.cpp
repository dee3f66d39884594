#include <gtest/gtest.h>

#include <set>

#include "goodlab/errors.hpp"
#include "goodlab/synth.hpp"
#include "helpers.hpp"

using namespace goodlab;
using namespace goodlab::testing;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(Scm, NoiselessCausalDepthOneIsRowSums) {
  ScmConfig cfg;
  cfg.noise_scale = 0.0;
  cfg.x1_constant = 1.0;
  cfg.causal_depth = 1;
  cfg.nodes_per_env = 80;
  cfg.edge_probability = 0.05;
  Rng rng(3, "test/scm");
  const auto env = sample_scm_environment(cfg, 0, 0.0, rng);
  for (std::size_t i = 0; i < cfg.nodes_per_env; ++i) EXPECT_NEAR(env.y[i], env.adj.tilde_a.row_sum(i), 1e-14);
}

TEST(Scm, ConceptShiftSpuriousResidualHasEnvironmentMean) {
  ScmConfig cfg;
  cfg.nodes_per_env = 4000;
  cfg.edge_probability = 0.002;
  const double sd = std::sqrt(cfg.noise_scale * cfg.noise_scale + cfg.within_env_std * cfg.within_env_std);
  for (double mu : {2.0, -2.0}) {
    Rng rng(5, mu > 0 ? "test/plus" : "test/minus");
    const auto env = sample_scm_environment(cfg, 0, mu, rng);
    std::vector<double> ay(env.y.size(), 0.0);
    for (std::size_t i = 0; i < ay.size(); ++i)
      for (std::size_t k = env.adj.tilde_a.row_ptr[i]; k < env.adj.tilde_a.row_ptr[i + 1]; ++k)
        ay[i] += env.adj.tilde_a.val[k] * env.y[env.adj.tilde_a.col[k]];
    std::vector<double> resid(ay.size());
    for (std::size_t i = 0; i < ay.size(); ++i) resid[i] = env.x2[i] - ay[i];
    EXPECT_NEAR(mean_of(resid), mu, 3.0 * sd / std::sqrt(static_cast<double>(resid.size())));
  }
}

TEST(Scm, CovariateShiftSpuriousIsUncorrelatedWithTarget) {
  ScmConfig cfg;
  cfg.shift = ShiftKind::Covariate;
  cfg.nodes_per_env = 4000;
  cfg.edge_probability = 0.002;
  for (double mu : {-1.5, 0.0, 1.5}) {
    Rng rng(9, "test/cov-" + std::to_string(mu));
    const auto env = sample_scm_environment(cfg, 0, mu, rng);
    const double my = mean_of(env.y), mx = mean_of(env.x2);
    double cov = 0.0, vy = 0.0, vx = 0.0;
    for (std::size_t i = 0; i < env.y.size(); ++i) {
      cov += (env.y[i] - my) * (env.x2[i] - mx);
      vy += (env.y[i] - my) * (env.y[i] - my);
      vx += (env.x2[i] - mx) * (env.x2[i] - mx);
    }
    const double n = static_cast<double>(env.y.size());
    EXPECT_LT(std::abs(cov / n), 3.0 * std::sqrt(vy / n * vx / n) / std::sqrt(n));
  }
}

TEST(Scm, EnvironmentCountAndTargets) {
  ScmConfig cfg;
  cfg.num_envs = 4;
  cfg.num_test_envs = 1;
  const Graph g = gen_scm(cfg);
  EXPECT_EQ(g.num_nodes, 4 * cfg.nodes_per_env);
  EXPECT_EQ(g.distinct_envs(Split::Test), (std::vector<int>{3}));
  EXPECT_EQ(g.targets.size(), g.num_nodes);
  const auto mus = cfg.resolved_env_means();
  ASSERT_EQ(mus.size(), 4u);
  EXPECT_NEAR(mean_of(mus), 0.0, 1e-12);
  double var = 0.0;
  for (double m : mus) var += m * m / 4.0;
  EXPECT_NEAR(var, cfg.cross_env_spurious_variance, 1e-12);
}

TEST(Csbm, VanishingNoiseGivesClassMeans) {
  CsbmConfig cfg;
  cfg.noise_variance = 1e-8;
  const auto ds = gen_csbm(cfg);
  const std::size_t half = cfg.feature_dim / 2;
  for (std::size_t i = 0; i < ds.graph.num_nodes; ++i)
    for (std::size_t d = 0; d < half; ++d)
      EXPECT_NEAR(ds.graph.features(i, d), ds.means.class_means(ds.graph.labels[i], d), 5e-4);
}

TEST(Csbm, PureHomophilyHasNoHeterophilicEdges) {
  CsbmConfig cfg;
  cfg.num_classes = 2;
  cfg.p_hm = 1.0;
  const auto ds = gen_csbm(cfg);
  ASSERT_FALSE(ds.graph.edges.empty());
  for (const auto& [u, v] : ds.graph.edges) EXPECT_EQ(ds.graph.labels[u], ds.graph.labels[v]);
}

TEST(Csbm, NeighborClassFrequenciesMatchTable) {
  CsbmConfig cfg;
  cfg.num_classes = 3;
  cfg.num_envs = 2;
  cfg.nodes_per_class = 400;
  cfg.p_hm = 0.6;
  const Tensor table{{0.0, 0.3, 0.1}, {0.05, 0.0, 0.35}, {0.2, 0.2, 0.0}};
  cfg.p_ht = {table, table};
  const auto ds = gen_csbm(cfg);
  const Graph& g = ds.graph;
  const std::size_t C = 3;
  // Neighbors arrive by both endpoints' proposals, so the expected share of
  // class d around class c is (p_c(d) + p_d(c)) / sum_d' (p_c(d') + p_d'(c)).
  auto prob = [&](std::size_t c, std::size_t d) { return c == d ? cfg.p_hm : table(c, d); };
  for (int e = 0; e < 2; ++e) {
    std::vector<std::vector<double>> count(C, std::vector<double>(C, 0.0));
    for (const auto& [u, v] : g.edges) {
      if (g.envs[u] != e) continue;
      count[g.labels[u]][g.labels[v]] += 1;
      count[g.labels[v]][g.labels[u]] += 1;
    }
    for (std::size_t c = 0; c < C; ++c) {
      double n = 0.0, z = 0.0;
      for (std::size_t d = 0; d < C; ++d) {
        n += count[c][d];
        z += prob(c, d) + prob(d, c);
      }
      for (std::size_t d = 0; d < C; ++d) {
        const double expected = (prob(c, d) + prob(d, c)) / z;
        const double se = std::sqrt(expected * (1.0 - expected) / n);
        EXPECT_NEAR(count[c][d] / n, expected, 3.0 * se) << "env " << e << " class " << c << " -> " << d;
      }
    }
  }
}

TEST(Csbm, RowsMustSumToOne) {
  CsbmConfig cfg;
  cfg.p_hm = 0.6;
  const Tensor bad{{0.0, 0.3, 0.3}, {0.2, 0.0, 0.2}, {0.2, 0.2, 0.0}};
  cfg.p_ht = {bad, bad, bad};
  EXPECT_THROW(gen_csbm(cfg), ConfigError);
}

TEST(Csbm, MeansFileMustBeOrthonormal) {
  EXPECT_NO_THROW(require_orthonormal_rows(Tensor{{1, 0, 0}, {0, 1, 0}}, "means"));
  try {
    require_orthonormal_rows(Tensor{{1, 0, 0}, {0.6, 0.8, 0}}, "means");
    FAIL() << "accepted non-orthonormal rows";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("max pairwise |dot| = 0.5999"), std::string::npos) << e.what();
  }
}

TEST(Toy, MeanTables) {
  EXPECT_EQ(toy_invariant_mean(0), (std::array<double, 2>{1, 1}));
  EXPECT_EQ(toy_spurious_mean(ShiftKind::Concept, 2, 0), (std::array<double, 2>{-3, -3}));
  // Training environment 1 is index 0.
  EXPECT_EQ(toy_spurious_mean(ShiftKind::Covariate, 0, 0), (std::array<double, 2>{2, 2}));
  EXPECT_EQ(toy_spurious_mean(ShiftKind::Covariate, 2, 3), (std::array<double, 2>{6, 6}));
  EXPECT_EQ(toy_spurious_mean(ShiftKind::Concept, 1, 3), (std::array<double, 2>{3, 3}));
  EXPECT_EQ(toy_invariant_mean(3), (std::array<double, 2>{1, -1}));
}

TEST(Toy, LayoutAndOodValidation) {
  ToyConfig cfg;
  cfg.seed = 4;
  const Graph g = gen_toy(cfg);
  EXPECT_EQ(g.num_nodes, 3 * 4 * cfg.nodes_per_class_per_env);
  EXPECT_EQ(g.feature_dim(), 4u);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (g.split[i] == Split::Train) {
      EXPECT_NE(g.envs[i], 2);
    } else {
      EXPECT_EQ(g.envs[i], 2);
    }
  }
  const auto val = g.nodes_in(Split::Val).size(), test = g.nodes_in(Split::Test).size();
  EXPECT_NEAR(static_cast<double>(val) / static_cast<double>(val + test), cfg.val_fraction, 0.01);
}

TEST(Toy, SameSeedSameGraph) {
  ToyConfig cfg;
  cfg.seed = 7;
  const Graph a = gen_toy(cfg), b = gen_toy(cfg);
  EXPECT_EQ(a.edges, b.edges);
  EXPECT_EQ(a.features, b.features);
  cfg.seed = 8;
  EXPECT_NE(gen_toy(cfg).features, a.features);
}
