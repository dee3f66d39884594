#include "goodlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "goodlab/errors.hpp"

namespace goodlab {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& token) {
  if (token == "train") return Split::Train;
  if (token == "val") return Split::Val;
  if (token == "test") return Split::Test;
  throw ConfigError("unknown split token '" + token + "' (expected train|val|test)");
}

void Graph::validate() const {
  const std::size_t n = num_nodes;
  if (features.rows() != n) {
    throw ContractError("graph: features have " + std::to_string(features.rows()) + " rows, expected " +
                        std::to_string(n));
  }
  if (labels.size() != n || envs.size() != n || split.size() != n) {
    throw ContractError("graph: labels/envs/split length must equal num_nodes");
  }
  if (!targets.empty() && targets.size() != n) {
    throw ContractError("graph: targets length must equal num_nodes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ContractError("graph: node " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                          " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [u, v] = edges[k];
    if (u >= n || v >= n) throw ContractError("graph: edge endpoint out of range");
    if (u == v) throw ContractError("graph: self-loop at node " + std::to_string(u));
    if (u > v) throw ContractError("graph: edge not canonical (u > v)");
    if (k > 0 && !(edges[k - 1] < edges[k])) throw ContractError("graph: duplicate or unsorted edges");
  }
}

std::vector<std::size_t> Graph::nodes_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < num_nodes; ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::vector<int> Graph::distinct_envs(Split s) const {
  std::set<int> seen;
  for (std::size_t i = 0; i < num_nodes; ++i)
    if (split[i] == s) seen.insert(envs[i]);
  return {seen.begin(), seen.end()};
}

std::vector<Edge> canonical_edges(std::vector<Edge> edges, std::size_t num_nodes) {
  for (auto& e : edges) {
    if (e.first >= num_nodes || e.second >= num_nodes) {
      throw ContractError("edge (" + std::to_string(e.first) + ", " + std::to_string(e.second) +
                          ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    if (e.first == e.second) throw ContractError("self-loop at node " + std::to_string(e.first));
    if (e.first > e.second) std::swap(e.first, e.second);
  }
  std::sort(edges.begin(), edges.end());
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw ContractError("duplicate edge in edge list");
  }
  return edges;
}

Graph induced_subgraph(const Graph& g, const std::vector<std::size_t>& nodes) {
  std::vector<std::size_t> index(g.num_nodes, AdjacencyPattern::kSelf);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (k > 0 && nodes[k] <= nodes[k - 1]) throw ContractError("induced_subgraph: nodes must ascend");
    index[nodes[k]] = k;
  }
  Graph out;
  out.num_nodes = nodes.size();
  out.num_classes = g.num_classes;
  out.features = Tensor(nodes.size(), g.feature_dim());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::size_t i = nodes[k];
    std::copy(g.features.row(i).begin(), g.features.row(i).end(), out.features.row(k).begin());
    out.labels.push_back(g.labels[i]);
    out.envs.push_back(g.envs[i]);
    out.split.push_back(g.split[i]);
    if (!g.targets.empty()) out.targets.push_back(g.targets[i]);
  }
  for (const auto& [u, v] : g.edges) {
    if (index[u] != AdjacencyPattern::kSelf && index[v] != AdjacencyPattern::kSelf) {
      out.edges.emplace_back(index[u], index[v]);
    }
  }
  // Relabeling preserves order because `nodes` ascends.
  return out;
}

double CsrMatrix::at(std::size_t i, std::size_t j) const {
  const auto b = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[i]);
  const auto e = col.begin() + static_cast<std::ptrdiff_t>(row_ptr[i + 1]);
  const auto it = std::lower_bound(b, e, j);
  if (it == e || *it != j) return 0.0;
  return val[static_cast<std::size_t>(it - col.begin())];
}

double CsrMatrix::row_sum(std::size_t i) const {
  double s = 0.0;
  for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += val[k];
  return s;
}

Tensor CsrMatrix::multiply(const Tensor& dense) const {
  if (dense.rows() != cols) {
    throw ContractError("spmm: sparse [" + std::to_string(rows) + "x" + std::to_string(cols) + "] x dense " +
                        dense.shape_string());
  }
  Tensor out(rows, dense.cols());
  for (std::size_t i = 0; i < rows; ++i) {
    auto orow = out.row(i);
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
      const double a = val[k];
      const auto drow = dense.row(col[k]);
      for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += a * drow[c];
    }
  }
  return out;
}

Tensor CsrMatrix::to_dense() const {
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) out(i, col[k]) = val[k];
  return out;
}

AdjacencyPattern AdjacencyPattern::from_graph(const Graph& g) {
  AdjacencyPattern p;
  const std::size_t n = g.num_nodes;
  p.num_nodes = n;
  p.num_edges = g.edges.size();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    adj[u].emplace_back(v, e);
    adj[v].emplace_back(u, e);
  }
  p.row_ptr.assign(n + 1, 0);
  p.loop_row_ptr.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = adj[i];
    std::sort(row.begin(), row.end());
    bool self_done = false;
    for (const auto& [j, e] : row) {
      p.col.push_back(j);
      p.edge_of.push_back(e);
      if (!self_done && j > i) {
        p.loop_col.push_back(i);
        p.loop_edge_of.push_back(kSelf);
        self_done = true;
      }
      p.loop_col.push_back(j);
      p.loop_edge_of.push_back(e);
    }
    if (!self_done) {
      p.loop_col.push_back(i);
      p.loop_edge_of.push_back(kSelf);
    }
    p.row_ptr[i + 1] = p.col.size();
    p.loop_row_ptr[i + 1] = p.loop_col.size();
  }
  return p;
}

NormalizedAdjacency build_normalized(const Graph& g) { return build_normalized(AdjacencyPattern::from_graph(g)); }

NormalizedAdjacency build_normalized(const AdjacencyPattern& p) {
  const std::vector<double> ones(p.num_edges, 1.0);
  return build_normalized(p, ones);
}

NormalizedAdjacency build_normalized(const AdjacencyPattern& p, std::span<const double> w) {
  if (w.size() != p.num_edges) {
    throw ContractError("build_normalized: " + std::to_string(w.size()) + " weights for " +
                        std::to_string(p.num_edges) + " edges");
  }
  const std::size_t n = p.num_nodes;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) deg[i] += w[p.edge_of[k]];

  NormalizedAdjacency out;
  for (CsrMatrix* m : {&out.bar_a, &out.row_norm_a}) {
    m->rows = m->cols = n;
    m->row_ptr = p.row_ptr;
    m->col = p.col;
    m->val.resize(p.col.size());
  }
  out.tilde_a.rows = out.tilde_a.cols = n;
  out.tilde_a.row_ptr = p.loop_row_ptr;
  out.tilde_a.col = p.loop_col;
  out.tilde_a.val.resize(p.loop_col.size());

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
      const std::size_t j = p.col[k];
      const double we = w[p.edge_of[k]];
      out.bar_a.val[k] = we / std::sqrt((deg[i] + 1.0) * (deg[j] + 1.0));
      out.row_norm_a.val[k] = deg[i] > 0.0 ? we / deg[i] : 0.0;
    }
    for (std::size_t k = p.loop_row_ptr[i]; k < p.loop_row_ptr[i + 1]; ++k) {
      const std::size_t j = p.loop_col[k];
      const std::size_t e = p.loop_edge_of[k];
      out.tilde_a.val[k] = e == AdjacencyPattern::kSelf ? 1.0 / (deg[i] + 1.0)
                                                        : w[e] / std::sqrt((deg[i] + 1.0) * (deg[j] + 1.0));
    }
  }
  return out;
}

HopDistanceTable::HopDistanceTable(std::size_t num_nodes, std::size_t max_hops)
    : max_hops_(max_hops), rows_(num_nodes) {}

std::optional<std::size_t> HopDistanceTable::distance(std::size_t i, std::size_t j) const {
  const auto& row = rows_.at(i);
  const auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(j, std::size_t{0}));
  if (it == row.end() || it->first != j) return std::nullopt;
  return it->second;
}

std::size_t HopDistanceTable::num_entries() const {
  std::size_t total = 0;
  for (const auto& r : rows_) total += r.size();
  return total;
}

HopDistanceTable bounded_shortest_paths(const Graph& g, std::size_t t) {
  if (t < 1) throw ContractError("bounded_shortest_paths: t must be >= 1");
  const auto p = AdjacencyPattern::from_graph(g);
  const std::size_t n = g.num_nodes;
  HopDistanceTable table(n, t);
  std::vector<std::size_t> dist(n, AdjacencyPattern::kSelf);
  std::vector<std::size_t> touched;
  std::deque<std::size_t> queue;
  for (std::size_t s = 0; s < n; ++s) {
    dist[s] = 0;
    touched.assign(1, s);
    queue.assign(1, s);
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      if (dist[u] == t) continue;
      for (std::size_t k = p.row_ptr[u]; k < p.row_ptr[u + 1]; ++k) {
        const std::size_t v = p.col[k];
        if (dist[v] != AdjacencyPattern::kSelf) continue;
        dist[v] = dist[u] + 1;
        touched.push_back(v);
        queue.push_back(v);
      }
    }
    auto& row = table.rows_[s];
    for (std::size_t v : touched)
      if (v != s) row.emplace_back(v, dist[v]);
    std::sort(row.begin(), row.end());
    for (std::size_t v : touched) dist[v] = AdjacencyPattern::kSelf;
  }
  return table;
}

NeighborhoodProfile neighborhood_label_distribution(const Graph& g, const NormalizedAdjacency& adj,
                                                    std::size_t depth, const std::vector<bool>& label_mask) {
  return neighborhood_label_distribution(adj.row_norm_a, g.labels, g.num_classes, depth, label_mask);
}

NeighborhoodProfile neighborhood_label_distribution(const CsrMatrix& row_norm, const std::vector<int>& labels,
                                                    std::size_t num_classes, std::size_t depth,
                                                    const std::vector<bool>& label_mask) {
  const std::size_t n = row_norm.rows;
  if (labels.size() != n) throw ContractError("neighborhood_label_distribution: label count mismatch");
  if (!label_mask.empty() && label_mask.size() != n) {
    throw ContractError("neighborhood_label_distribution: mask length mismatch");
  }
  Tensor r(n, num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (!label_mask.empty() && !label_mask[i]) continue;
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ContractError("neighborhood_label_distribution: label out of range at node " + std::to_string(i));
    }
    r(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  for (std::size_t step = 0; step < depth; ++step) r = row_norm.multiply(r);
  return {std::move(r), depth};
}

RatioDiscrepancy pair_ratio_discrepancies(const NeighborhoodProfile& profile, const std::vector<int>& labels,
                                          std::size_t i, std::size_t j, int c) {
  if (labels.at(i) != c || labels.at(j) != c) {
    throw ContractError("pair_ratio_discrepancies: nodes " + std::to_string(i) + " and " + std::to_string(j) +
                        " are not both of class " + std::to_string(c));
  }
  const auto ri = profile.ratios.row(i);
  const auto rj = profile.ratios.row(j);
  RatioDiscrepancy out;
  for (std::size_t k = 0; k < ri.size(); ++k) {
    const double d = std::abs(ri[k] - rj[k]);
    if (static_cast<int>(k) == c) out.same = d;
    else out.diff += d;
  }
  return out;
}

}  // namespace goodlab
