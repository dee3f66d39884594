#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "goodlab/graph.hpp"
#include "goodlab/kvconfig.hpp"
#include "goodlab/rng.hpp"

namespace goodlab {

enum class ShiftKind { Concept, Covariate };
std::string to_string(ShiftKind k);
ShiftKind parse_shift(const std::string& token);

// Erdos-Renyi G(n, p) edges (u < v, sorted) by geometric skipping.
std::vector<Edge> erdos_renyi_edges(std::size_t n, double p, Rng& rng);

// Regression SCM on graphs.
//   concept:   Y = A~^k X1 + n1,  X2 = A~^m Y + n2 + eps
//   covariate: Y = A~^k X1 + n1,  X2 = n2 + eps
// eps_i ~ N(mu_e, within_env_std^2) inside environment e.
struct ScmConfig {
  std::size_t num_envs = 3;
  std::size_t nodes_per_env = 200;
  std::size_t causal_depth = 1;
  std::size_t spurious_depth = 1;
  ShiftKind shift = ShiftKind::Concept;
  // One mean per environment. Empty: evenly spaced, centered at 0, with
  // population variance equal to cross_env_spurious_variance.
  std::vector<double> env_spurious_means;
  double cross_env_spurious_variance = 1.0;
  double within_env_std = 0.5;
  double edge_probability = 0.02;
  double cross_env_edge_fraction = 0.05;
  double noise_scale = 1.0;           // multiplies n1 and n2
  double x1_mean = 0.0;               // X1 ~ N(x1_mean, 1)
  std::optional<double> x1_constant;  // X1 = constant instead
  std::size_t num_classes = 4;        // quantile bins of Y for labels.tsv
  std::size_t num_test_envs = 1;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<double> resolved_env_means() const;
};

struct ScmEnvironment {
  Graph graph;  // local node ids, within-environment edges only
  NormalizedAdjacency adj;
  std::vector<double> x1, x2, y, eps;
  double mu = 0.0;
};

ScmEnvironment sample_scm_environment(const ScmConfig& cfg, std::size_t env, double mu, Rng& rng);
Graph gen_scm(const ScmConfig& cfg);

// Contextual SBM with environment-specific spurious means.
struct CsbmConfig {
  std::size_t num_classes = 3;
  std::size_t feature_dim = 8;  // even; halves are invariant / spurious
  std::size_t num_envs = 3;     // the last one is the test environment
  std::size_t nodes_per_class = 50;
  double noise_variance = 0.1;
  double p_hm = 0.7;
  // Per environment C x C table; entry (c, c') is the probability that a
  // neighbor of a class-c node has class c' != c. Diagonal ignored. Empty:
  // (1 - p_hm) spread uniformly.
  std::vector<Tensor> p_ht;
  double mean_degree = 10.0;
  // C x D/2 rows. Empty: seeded QR.
  Tensor class_means;
  std::vector<Tensor> env_means;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  Tensor resolved_p_ht(std::size_t env) const;
};

struct CsbmMeans {
  Tensor class_means;              // C x D/2
  std::vector<Tensor> env_means;   // per env, C x D/2
};

struct CsbmDataset {
  Graph graph;
  CsbmMeans means;
};

// Throws ConfigError reporting the max |<u, v>| over distinct rows and the max
// |norm - 1| if rows are not orthonormal within tol.
void require_orthonormal_rows(const Tensor& m, const std::string& what, double tol = 1e-8);
// k orthonormal vectors in R^dim as rows.
Tensor random_orthonormal_rows(std::size_t k, std::size_t dim, Rng& rng);
Tensor read_means_file(const std::filesystem::path& path);

CsbmDataset gen_csbm(const CsbmConfig& cfg);
void write_csbm_means(const CsbmMeans& means, const std::filesystem::path& path);
CsbmMeans read_csbm_means(const std::filesystem::path& path);

// Four-class toy data: invariant dims carry class means (+-1, +-1), spurious
// dims follow the environment table. Environments 0 and 1 train, 2 test.
struct ToyConfig {
  std::size_t nodes_per_class_per_env = 100;
  ShiftKind shift = ShiftKind::Concept;
  double edge_probability = 0.01;
  double cross_env_edge_fraction = 0.05;
  double val_fraction = 0.3;  // of the test environment when ood_validation is set
  // Validation nodes come from the test environment (OOD validation) instead
  // of the training environments.
  bool ood_validation = true;
  std::uint64_t seed = 0;

  void validate() const;
};

std::array<double, 2> toy_invariant_mean(int cls);
std::array<double, 2> toy_spurious_mean(ShiftKind shift, int env, int cls);
Graph gen_toy(const ToyConfig& cfg);

ScmConfig scm_config_from_kv(const KvConfig& kv);
CsbmConfig csbm_config_from_kv(const KvConfig& kv);
ToyConfig toy_config_from_kv(const KvConfig& kv);
KvConfig to_kv(const ScmConfig& cfg);
KvConfig to_kv(const CsbmConfig& cfg);
KvConfig to_kv(const ToyConfig& cfg);

}  // namespace goodlab
