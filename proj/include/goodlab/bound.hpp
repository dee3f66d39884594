#pragma once

#include <optional>
#include <string>
#include <vector>

#include "goodlab/graph.hpp"
#include "goodlab/synth.hpp"
#include "goodlab/tensor.hpp"

namespace goodlab {

struct BoundConfig {
  double sigma2 = 0.1;
  // Analysis parameters of the bound's confidence statement. Recorded only.
  double alpha = 0.1;
  double delta = 0.05;
  double gamma = 0.0;
  // Largest layer spectral norm of a trained head, when one is supplied. Recorded only.
  std::optional<double> t_h;
};

struct BoundReport {
  double epsilon = 0.0;
  double term_a = 0.0;
  double term_b = 0.0;
  double term_c = 0.0;
  double max_feature_norm = 0.0;
  BoundConfig config;
  std::size_t n_train = 0, n_test = 0;
  std::vector<std::string> notes;

  std::string to_json() const;
};

// One side (train or test) of the bound: aggregated features g, heterophilic
// neighbor ratios p (N x C, entry c' = fraction of neighbors with class c'),
// labels, environment ids.
struct BoundSide {
  Tensor g;
  Tensor p;
  std::vector<int> labels;
  std::vector<int> envs;
};

// Neighbor class fractions for every node (zero rows for isolated nodes).
Tensor neighbor_class_ratios(const Graph& g);
BoundSide bound_side(const Graph& g, const Tensor& aggregated, const Tensor& ratios,
                     const std::vector<std::size_t>& nodes);

// Each test node joins the near-set of its closest train node (ties to the
// lowest index). Returns the train index per test row.
std::vector<std::size_t> nearest_train(const Tensor& g_train, const Tensor& g_test);

// sum_c sum_{c' != c} |p_j(c'|c) - p_i(c'|c)| where p_k(.|c) is node k's
// heterophilic profile if y_k = c and zero otherwise.
double heterophily_discrepancy(const BoundSide& train, std::size_t i, const BoundSide& test, std::size_t j,
                               std::size_t num_classes);

double term_c_value(const BoundSide& train, const BoundSide& test, std::size_t num_classes, double sigma2);

BoundReport bound_terms(const CsbmMeans& means, const BoundSide& train, const BoundSide& test,
                        const BoundConfig& cfg);
BoundReport bound_terms(const CsbmMeans& means, const Graph& g, const std::vector<std::size_t>& train_nodes,
                        const std::vector<std::size_t>& test_nodes, const BoundConfig& cfg);

// Moves min(delta, p[y]) of each node's same-class neighbor mass to class y+1.
Tensor shift_heterophily(const Tensor& p, const std::vector<int>& labels, double delta);

}  // namespace goodlab
