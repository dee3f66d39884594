#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "goodlab/tensor.hpp"

namespace goodlab {

enum class Split : std::uint8_t { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& token);

using Edge = std::pair<std::size_t, std::size_t>;

// Undirected node-labeled graph. Edges are stored once with u < v, sorted.
struct Graph {
  std::size_t num_nodes = 0;
  std::size_t num_classes = 0;
  std::vector<Edge> edges;
  Tensor features;  // N x D
  std::vector<int> labels;
  std::vector<int> envs;  // -1 = unknown
  std::vector<Split> split;
  // Optional continuous regression target (SCM data). Empty when absent.
  std::vector<double> targets;

  std::size_t feature_dim() const { return features.cols(); }

  // Throws ContractError on the first broken invariant.
  void validate() const;

  std::vector<std::size_t> nodes_in(Split s) const;
  std::vector<int> distinct_envs(Split s) const;
};

// Sort endpoints, sort edges, reject self-loops and duplicates.
std::vector<Edge> canonical_edges(std::vector<Edge> edges, std::size_t num_nodes);

// Sub-graph induced by `nodes` (ascending). Node k of the result is nodes[k].
Graph induced_subgraph(const Graph& g, const std::vector<std::size_t>& nodes);

// Compressed sparse rows, columns ascending within each row.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::size_t> col;
  std::vector<double> val;

  std::size_t nnz() const { return col.size(); }
  double at(std::size_t i, std::size_t j) const;
  double row_sum(std::size_t i) const;
  Tensor multiply(const Tensor& dense) const;
  Tensor to_dense() const;
};

// Structure of A shared by every normalization. Each directed entry (i, j)
// carries the index of its undirected edge. `loop_*` is the same structure
// with the diagonal inserted in column order; its edge index is kSelf.
struct AdjacencyPattern {
  static constexpr std::size_t kSelf = static_cast<std::size_t>(-1);

  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  std::vector<std::size_t> row_ptr, col, edge_of;
  std::vector<std::size_t> loop_row_ptr, loop_col, loop_edge_of;

  static AdjacencyPattern from_graph(const Graph& g);
  std::size_t degree(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
};

struct NormalizedAdjacency {
  CsrMatrix bar_a;       // (D+I)^-1/2 A (D+I)^-1/2
  CsrMatrix tilde_a;     // bar_a + (D+I)^-1
  CsrMatrix row_norm_a;  // D^-1 A, zero rows for isolated nodes
};

NormalizedAdjacency build_normalized(const Graph& g);
NormalizedAdjacency build_normalized(const AdjacencyPattern& p);
// Same three matrices for the soft adjacency A_m with one weight per undirected
// edge. Degrees are weighted row sums. All-ones weights reproduce the unweighted
// result bit for bit.
NormalizedAdjacency build_normalized(const AdjacencyPattern& p, std::span<const double> edge_weights);

class HopDistanceTable {
 public:
  HopDistanceTable(std::size_t num_nodes, std::size_t max_hops);

  std::size_t max_hops() const { return max_hops_; }
  std::size_t num_nodes() const { return rows_.size(); }
  std::optional<std::size_t> distance(std::size_t i, std::size_t j) const;
  // (j, d) pairs with j != i, d <= t, ascending j.
  const std::vector<std::pair<std::size_t, std::size_t>>& within(std::size_t i) const { return rows_[i]; }
  std::size_t num_entries() const;

  friend HopDistanceTable bounded_shortest_paths(const Graph& g, std::size_t t);

 private:
  std::size_t max_hops_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> rows_;
};

HopDistanceTable bounded_shortest_paths(const Graph& g, std::size_t t);

struct NeighborhoodProfile {
  Tensor ratios;  // N x C
  std::size_t depth = 0;
};

// R = row_norm^L * OneHot(labels). Nodes with label_mask[i] == false contribute
// a zero one-hot row. An empty mask means every node contributes.
NeighborhoodProfile neighborhood_label_distribution(const Graph& g, const NormalizedAdjacency& adj,
                                                    std::size_t depth,
                                                    const std::vector<bool>& label_mask = {});
NeighborhoodProfile neighborhood_label_distribution(const CsrMatrix& row_norm,
                                                    const std::vector<int>& labels,
                                                    std::size_t num_classes, std::size_t depth,
                                                    const std::vector<bool>& label_mask = {});

struct RatioDiscrepancy {
  double same = 0.0;
  double diff = 0.0;
};

RatioDiscrepancy pair_ratio_discrepancies(const NeighborhoodProfile& profile,
                                          const std::vector<int>& labels, std::size_t i,
                                          std::size_t j, int c);

}  // namespace goodlab
