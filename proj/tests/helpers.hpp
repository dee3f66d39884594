#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "goodlab/graph.hpp"
#include "goodlab/rng.hpp"

namespace goodlab::testing {

inline Graph make_graph(std::size_t n, std::vector<Edge> edges, std::vector<int> labels = {},
                        std::size_t num_classes = 2, std::size_t dim = 2) {
  Graph g;
  g.num_nodes = n;
  g.num_classes = num_classes;
  g.edges = canonical_edges(std::move(edges), n);
  g.labels = labels.empty() ? std::vector<int>(n, 0) : std::move(labels);
  g.envs.assign(n, 0);
  g.split.assign(n, Split::Train);
  g.features = Tensor(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) g.features(i, d) = std::sin(1.7 * i + 0.9 * d + 0.3);
  return g;
}

inline Graph random_graph(std::size_t n, double p, std::size_t num_classes, std::uint64_t seed,
                          std::size_t dim = 2) {
  Rng rng(seed, "test/graph");
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (rng.bernoulli(p)) edges.emplace_back(u, v);
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(rng.index(num_classes));
  Graph g = make_graph(n, edges, labels, num_classes, dim);
  for (auto& v : g.features.values()) v = rng.normal();
  return g;
}

inline Eigen::MatrixXd dense_adjacency(const Graph& g) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.num_nodes, g.num_nodes);
  for (const auto& [u, v] : g.edges) a(u, v) = a(v, u) = 1.0;
  return a;
}

inline Eigen::MatrixXd dense(const CsrMatrix& m) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) d(i, m.col[k]) = m.val[k];
  return d;
}

inline Eigen::MatrixXd dense(const Tensor& t) {
  Eigen::MatrixXd d(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) d(i, j) = t(i, j);
  return d;
}

// (D+I)^-1/2 (A+I) (D+I)^-1/2 straight from the edge list.
inline Eigen::MatrixXd dense_tilde(const Graph& g) {
  Eigen::MatrixXd a = dense_adjacency(g) + Eigen::MatrixXd::Identity(g.num_nodes, g.num_nodes);
  Eigen::VectorXd s = a.rowwise().sum().cwiseInverse().cwiseSqrt();
  return s.asDiagonal() * a * s.asDiagonal();
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("goodlab-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Independent term_c: brute-force nearest train node per test node, then the
// class-conditional heterophilic profiles compared entry by entry.
inline double brute_term_c(const Graph& g, const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                    const Tensor& test_ratios, double sigma2) {
  const std::size_t C = g.num_classes;
  Eigen::MatrixXd a = dense_adjacency(g) + Eigen::MatrixXd::Identity(g.num_nodes, g.num_nodes);
  for (Eigen::Index i = 0; i < a.rows(); ++i) a.row(i) /= a.row(i).sum();
  const Eigen::MatrixXd agg = a * dense(g.features);
  Eigen::MatrixXd frac = Eigen::MatrixXd::Zero(g.num_nodes, C);
  const Eigen::MatrixXd adj = dense_adjacency(g);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    const double deg = adj.row(i).sum();
    for (std::size_t j = 0; j < g.num_nodes; ++j)
      if (adj(i, j) > 0) frac(i, g.labels[j]) += 1.0 / deg;
  }
  double total = 0.0;
  for (std::size_t tj = 0; tj < test.size(); ++tj) {
    const std::size_t j = test[tj];
    std::size_t best = train[0];
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i : train) {
      const double d = (agg.row(i) - agg.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t d = 0; d < C; ++d) {
        if (c == d) continue;
        const double pi = static_cast<std::size_t>(g.labels[best]) == c ? frac(best, d) : 0.0;
        const double pj = static_cast<std::size_t>(g.labels[j]) == c ? test_ratios(tj, d) : 0.0;
        total += std::abs(pj - pi);
      }
  }
  return total / (2.0 * sigma2 * static_cast<double>(train.size()) * static_cast<double>(test.size()));
}

}  // namespace goodlab::testing
