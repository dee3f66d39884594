#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "goodlab/kvconfig.hpp"
#include "goodlab/models.hpp"
#include "goodlab/objectives.hpp"
#include "goodlab/synth.hpp"

namespace goodlab {

// Numeric checks of the stationarity claims for the linear theory GNN.
struct OracleScenario {
  ShiftKind shift = ShiftKind::Concept;
  std::size_t depth = 3;           // L
  std::size_t causal_depth = 1;    // k
  std::size_t spurious_depth = 1;  // m
  std::size_t family_depth = 2;    // s
  std::size_t num_envs = 8;
  std::size_t nodes_per_env = 100;
  std::size_t samples = 100000;    // Monte-Carlo draws per environment
  double sigma2 = 1.0;             // cross-environment variance of the spurious mean
  double within_env_std = 0.5;
  double edge_probability = 0.05;
  double noise_scale = 1.0;
  // The spurious root of the VREx system needs a non-zero X1 mean and a
  // non-zero average environment mean; with both at 0 its theta2 vanishes in
  // expectation.
  double x1_mean = 1.0;
  double env_mean_offset = 2.0;  // added to every centered environment mean
  std::uint64_t seed = 0;

  void validate() const;
  ScmConfig scm_config() const;
  // 0.05 at 1e5 samples, scaling like 1 / sqrt(samples)
  double tolerance() const;
};

// Every key is required except within_env_std, edge_probability, noise_scale,
// x1_mean and env_mean_offset. Missing keys are named in the error.
OracleScenario oracle_scenario_from_kv(const KvConfig& kv);
KvConfig to_kv(const OracleScenario& sc);

// One environment of the graph SCM with its own noise draw.
struct TheoryEnv {
  NormalizedAdjacency adj;
  CsrPtr step;  // A~ - I
  std::vector<double> x1, x2, y, eps;
  double mu = 0.0;
};

// Independent topology and X1 per environment.
std::vector<TheoryEnv> sample_theory_envs(const OracleScenario& sc, const std::string& label);
// One topology and X1 shared by every environment; noise and eps differ. Node i
// of every environment has the same causal pattern.
std::vector<TheoryEnv> sample_shared_envs(const OracleScenario& sc, const std::string& label);
// Fresh n1, n2, eps on the environment's fixed topology and X1.
void redraw_noise(TheoryEnv& env, const OracleScenario& sc, Rng& rng);

struct GradientEstimate {
  std::vector<double> mean;
  std::vector<double> std_error;
  double norm = 0.0;
  double norm_stderr = 0.0;
};

// ---------------------------------------------------------------------------
// Non-graph SCM: Y = X1 + n1, X2 = Y + n2 + eps (concept) or n2 + eps
// (covariate), f = theta1 X1 + theta2 X2.
struct NongraphReport {
  std::size_t samples = 0;  // per environment
  GradientEstimate vrex;   // d/dtheta of Var_e R(e)
  GradientEstimate irmv1;  // d/dtheta of mean_e (dR(e)/dw)^2
  GradientEstimate erm;    // d/dtheta of mean_e R(e)
  std::vector<double> env_means;
  std::vector<double> irm_env_grad;    // dR(e)/dw per environment
  std::vector<double> irm_env_stderr;
  double irm_env_max_z = 0.0;          // max pairwise |difference| / stderr
};

// `samples` draws per environment.
NongraphReport nongraph_stationarity(const OracleScenario& sc, double theta1, double theta2, std::size_t samples);

// ---------------------------------------------------------------------------
struct Theta1Spread {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; exactly 0 when all values agree
};

// theta1(e) = (A~^k X1 . A~^s X1) / |A~^s X1|^2 with dense products.
double env_theta1(const NormalizedAdjacency& adj, const std::vector<double>& x1, std::size_t k, std::size_t s);
Theta1Spread per_env_theta1(const std::vector<const TheoryEnv*>& envs, std::size_t k, std::size_t s);
Theta1Spread per_env_theta1(const OracleScenario& sc, std::size_t s);

// ---------------------------------------------------------------------------
// Constants of the two VREx stationarity equations with the lower layers on
// the spurious family of depth s, averaged over sampled environments.
struct VrexConstants {
  ShiftKind shift = ShiftKind::Concept;
  std::vector<double> c;  // c1..c7 (concept) or c1..c5 (covariate)
  double mean_nodes = 0.0;
  double sigma2 = 0.0;    // mean eps_i^2 over all sampled nodes
  std::size_t num_envs = 0;
};

VrexConstants vrex_constants(const OracleScenario& sc);
// Residual pair of the two stationarity equations.
std::array<double, 2> vrex_stationarity_residual(const VrexConstants& k, double theta1, double theta2);
// Same equations with the common theta2 factor divided out.
std::array<double, 2> vrex_reduced_residual(const VrexConstants& k, double theta1, double theta2);

struct VrexRoot {
  bool found = false;
  double theta1 = 0.0, theta2 = 0.0;
  std::array<double, 2> residual{0.0, 0.0};
  // |residual| over the largest |reduced residual| on the grid; the constants
  // grow like N^2, so this is the scale-free acceptance measure.
  std::array<double, 2> relative_residual{0.0, 0.0};
  std::size_t newton_steps = 0;
  double grid_theta1 = 0.0, grid_theta2 = 0.0;  // start of the refinement
};

// 81 x 81 grid on [-2, 2]^2 over the reduced residual, then damped Newton from
// the best grid cells. Only roots with |theta2| > min_abs_theta2 count.
VrexRoot find_vrex_spurious_root(const VrexConstants& k, double min_abs_theta2 = 0.05);

// ---------------------------------------------------------------------------
// Invariant optimum with the last spurious layer zeroed (its output is 0).
TheoryGnnParams cia_optimum_params(std::size_t k, std::size_t depth);

struct CiaCheckReport {
  std::vector<std::string> names;
  std::size_t draws = 0;
  double alignment_loss = 0.0;
  GradientEstimate alignment;  // over every scalar
  GradientEstimate erm;        // over every scalar
  double tolerance = 0.0;
  bool pass = false;
};

// Monte-Carlo gradients of the alignment loss and ERM on shared-topology
// environments, pairing node i of every environment pair.
CiaCheckReport cia_gradients(const OracleScenario& sc, const TheoryGnnParams& params);
CiaCheckReport cia_optimum_check(const OracleScenario& sc);

// ---------------------------------------------------------------------------
struct TheoryTrainConfig {
  ObjectiveKind objective = ObjectiveKind::Erm;
  double lambda = 1.0;
  std::size_t epochs = 3000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  bool init_at_optimum = false;  // start from theory_optimal_params instead of a random draw
};

// Share of the prediction norm carried by the spurious branch above which a
// trained model counts as spurious.
inline constexpr double kSpuriousRatio = 0.1;

struct RecoveryResult {
  TheoryGnnParams params;
  double spurious_ratio = 0.0;  // |theta2| |H2| / |prediction|
  bool spurious = false;        // ratio > kSpuriousRatio
  double final_loss = 0.0;
  std::size_t epochs = 0;
};

RecoveryResult end_to_end_recovery(const OracleScenario& sc, const TheoryTrainConfig& cfg);

// ---------------------------------------------------------------------------
struct ClaimResult {
  std::string name;
  bool pass = false;
  std::string json;  // estimates and standard errors
};

struct TheoryReport {
  OracleScenario scenario;
  std::vector<ClaimResult> claims;
  bool all_pass() const;
  std::string to_json() const;
};

TheoryReport verify_theory(const OracleScenario& sc);

}  // namespace goodlab
