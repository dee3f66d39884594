#include <gtest/gtest.h>

#include <json.hpp>

#include "goodlab/errors.hpp"
#include "goodlab/kvconfig.hpp"
#include "goodlab/theory.hpp"

using namespace goodlab;
using json = nlohmann::json;

TEST(Nongraph, InvariantPointIsStationaryForBothPenalties) {
  OracleScenario sc;
  sc.x1_mean = 0.0;
  sc.env_mean_offset = 0.0;
  for (auto shift : {ShiftKind::Concept, ShiftKind::Covariate}) {
    sc.shift = shift;
    const auto r = nongraph_stationarity(sc, 1.0, 0.0, 100000);
    EXPECT_LT(r.irmv1.norm, 5e-2) << to_string(shift);
    EXPECT_LT(r.vrex.norm, 5e-2) << to_string(shift);
  }
}

TEST(Nongraph, NoiseShrinksWithSamples) {
  OracleScenario sc;
  sc.x1_mean = 0.0;
  sc.env_mean_offset = 0.0;
  std::vector<double> avg;
  for (std::size_t n : {10000u, 40000u, 160000u}) {
    double s = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      sc.seed = seed;
      s += nongraph_stationarity(sc, 1.0, 0.0, n).irmv1.norm / 4.0;
    }
    avg.push_back(s);
  }
  EXPECT_GT(avg[0], avg[1]);
  EXPECT_GT(avg[1], avg[2]);
}

TEST(Nongraph, OriginIsNotStationaryForErm) {
  OracleScenario sc;
  const auto r = nongraph_stationarity(sc, 0.0, 0.0, 20000);
  EXPECT_GT(r.erm.norm, 0.5);
  EXPECT_GT(r.erm.norm, 10.0 * r.erm.norm_stderr);
}

TEST(Nongraph, IrmEnvironmentGradientsDifferOffTheInvariantPoint) {
  OracleScenario sc;
  sc.x1_mean = 0.0;
  sc.env_mean_offset = 0.0;
  const auto r = nongraph_stationarity(sc, 1.0, 0.5, 100000);
  EXPECT_GT(r.irm_env_max_z, 3.0);
}

TEST(Theta1, EqualDepthsGiveExactlyOne) {
  OracleScenario sc;
  sc.family_depth = sc.causal_depth;
  const auto spread = per_env_theta1(sc, sc.causal_depth);
  ASSERT_EQ(spread.values.size(), sc.num_envs);
  for (double v : spread.values) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(spread.stddev, 0.0);
}

TEST(Theta1, DifferentDepthsSpreadAcrossEnvironments) {
  OracleScenario sc;
  for (std::size_t s : {2u, 3u}) EXPECT_GT(per_env_theta1(sc, s).stddev, 1e-3) << "s=" << s;
}

TEST(Theta1, ReusedEnvironmentHasNoSpread) {
  OracleScenario sc;
  const auto envs = sample_theory_envs(sc, "reuse");
  const std::vector<const TheoryEnv*> same(8, &envs[0]);
  EXPECT_EQ(per_env_theta1(same, 1, 2).stddev, 0.0);
}

TEST(VrexSystem, FindsSpuriousRootUnderConceptShift) {
  OracleScenario sc;
  const auto k = vrex_constants(sc);
  const auto root = find_vrex_spurious_root(k);
  ASSERT_TRUE(root.found);
  EXPECT_GT(std::abs(root.theta2), 0.05);
  EXPECT_LT(std::abs(root.relative_residual[0]), 1e-2);
  EXPECT_LT(std::abs(root.relative_residual[1]), 1e-2);
}

TEST(VrexSystem, FirstEquationVanishesOnZeroTheta2) {
  for (auto shift : {ShiftKind::Concept, ShiftKind::Covariate}) {
    OracleScenario sc;
    sc.shift = shift;
    const auto k = vrex_constants(sc);
    for (double t1 : {-1.5, 0.0, 0.3, 2.0}) EXPECT_EQ(vrex_stationarity_residual(k, t1, 0.0)[0], 0.0);
  }
}

TEST(VrexSystem, DoublingSigma2ChangesTheSurface) {
  OracleScenario a;
  OracleScenario b = a;
  b.sigma2 = 2.0 * a.sigma2;
  const auto ka = vrex_constants(a), kb = vrex_constants(b);
  EXPECT_GT(kb.sigma2, ka.sigma2);
  const auto ra = vrex_stationarity_residual(ka, 0.8, 0.4), rb = vrex_stationarity_residual(kb, 0.8, 0.4);
  EXPECT_GT(std::abs(ra[1] - rb[1]), 1e-3 * std::max(std::abs(ra[1]), std::abs(rb[1])));
}

TEST(CiaOptimum, StationaryForEveryDepthPairAndShift) {
  for (auto shift : {ShiftKind::Concept, ShiftKind::Covariate}) {
    for (auto [k, L] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 2}, {1, 3}, {2, 3}}) {
      OracleScenario sc;
      sc.shift = shift;
      sc.causal_depth = k;
      sc.depth = L;
      sc.family_depth = 1;
      const auto r = cia_optimum_check(sc);
      EXPECT_TRUE(r.pass) << to_string(shift) << " k=" << k << " L=" << L << " align " << r.alignment.norm
                          << " erm " << r.erm.norm;
      EXPECT_LT(r.alignment.norm, 5e-2);
      EXPECT_LT(r.erm.norm, 5e-2);
    }
  }
}

TEST(CiaOptimum, ZeroInvariantHeadIsNotStationaryForErm) {
  OracleScenario sc;
  TheoryGnnParams p = cia_optimum_params(sc.causal_depth, sc.depth);
  p.theta1 = 0.0;
  const auto r = cia_gradients(sc, p);
  EXPECT_GT(std::abs(r.erm.mean[0]), 0.5);
  EXPECT_GT(std::abs(r.erm.mean[0]), 10.0 * r.erm.std_error[0]);
}

TEST(CiaOptimum, AlignmentLossIsExactlyZeroWithoutNoise) {
  OracleScenario sc;
  sc.noise_scale = 0.0;
  const auto r = cia_gradients(sc, cia_optimum_params(sc.causal_depth, sc.depth));
  EXPECT_EQ(r.alignment_loss, 0.0);
}

TEST(Recovery, NoiselessOptimumStaysPut) {
  OracleScenario sc;
  sc.noise_scale = 0.0;
  TheoryTrainConfig tc;
  tc.objective = ObjectiveKind::Cia;
  tc.init_at_optimum = true;
  tc.epochs = 200;
  const auto r = end_to_end_recovery(sc, tc);
  EXPECT_EQ(r.params.flatten(), theory_optimal_params(sc.causal_depth, sc.depth).flatten());
  EXPECT_EQ(r.final_loss, 0.0);
}

// Strong concept shift: the spurious feature carries the environment mean
// with variance 16 across environments.
TEST(Recovery, CiaFindsInvariantAndErmFindsSpurious) {
  OracleScenario sc;
  sc.sigma2 = 16.0;
  int cia_invariant = 0, erm_spurious = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TheoryTrainConfig tc;
    tc.seed = seed;
    tc.objective = ObjectiveKind::Cia;
    tc.lambda = 1.0;
    cia_invariant += end_to_end_recovery(sc, tc).spurious ? 0 : 1;
    tc.objective = ObjectiveKind::Erm;
    erm_spurious += end_to_end_recovery(sc, tc).spurious ? 1 : 0;
  }
  EXPECT_GE(cia_invariant, 4);
  EXPECT_GE(erm_spurious, 4);
}

TEST(VerifyTheory, DefaultScenarioPassesEveryClaim) {
  const auto rep = verify_theory(OracleScenario{});
  ASSERT_EQ(rep.claims.size(), 4u);
  for (const auto& c : rep.claims) EXPECT_TRUE(c.pass) << c.name << " " << c.json;
  const json j = json::parse(rep.to_json());
  EXPECT_TRUE(j.at("all_pass").get<bool>());
}

TEST(VerifyTheory, EqualDepthScenarioReportsZeroSpread) {
  OracleScenario sc;
  sc.family_depth = sc.causal_depth;
  const json j = json::parse(verify_theory(sc).to_json());
  const auto& claim = j.at("claims").at(0);
  EXPECT_EQ(claim.at("name"), "per_env_theta1");
  EXPECT_EQ(claim.at("std").get<double>(), 0.0);
}

TEST(VerifyTheory, MissingKeyIsNamed) {
  const auto kv = KvConfig::parse("shift = concept\nL = 3\nk = 1\nm = 1\ns = 2\nnodes_per_env = 50\nsamples = 10000\n"
                                  "sigma2 = 1\nseed = 0\n");
  try {
    oracle_scenario_from_kv(kv);
    FAIL() << "accepted a scenario without envs";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("envs"), std::string::npos) << e.what();
  }
  const OracleScenario sc;
  EXPECT_EQ(to_kv(oracle_scenario_from_kv(to_kv(sc))).serialize(), to_kv(sc).serialize());
}
