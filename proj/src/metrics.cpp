#include "goodlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "goodlab/errors.hpp"

namespace goodlab {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const auto r = logits.row(row);
  std::size_t best = 0;
  for (std::size_t c = 1; c < r.size(); ++c)
    if (r[c] > r[best]) best = c;
  return best;
}

double ood_accuracy(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) throw ContractError("ood_accuracy: empty node selection");
  std::size_t hits = 0;
  for (std::size_t i : nodes) hits += argmax_row(logits, i) == static_cast<std::size_t>(labels.at(i)) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

double invariant_variance(const Tensor& reps, const std::vector<int>& labels, const std::vector<std::size_t>& nodes) {
  const std::size_t half = reps.cols() / 2;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i : nodes) by_class[labels.at(i)].push_back(i);
  double total = 0.0;
  std::size_t classes = 0;
  for (const auto& [c, members] : by_class) {
    if (members.size() < 2) continue;
    const double n = static_cast<double>(members.size());
    double trace = 0.0;
    for (std::size_t d = 0; d < half; ++d) {
      double mu = 0.0;
      for (std::size_t i : members) mu += reps(i, d);
      mu /= n;
      double v = 0.0;
      for (std::size_t i : members) v += (reps(i, d) - mu) * (reps(i, d) - mu);
      trace += v / n;
    }
    total += trace;
    ++classes;
  }
  return classes ? total / static_cast<double>(classes) : 0.0;
}

double spurious_norm(const Tensor& reps, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return 0.0;
  const std::size_t half = reps.cols() / 2;
  double total = 0.0;
  for (std::size_t i : nodes) {
    double s = 0.0;
    for (std::size_t d = half; d < reps.cols(); ++d) s += reps(i, d) * reps(i, d);
    total += std::sqrt(s);
  }
  return total / static_cast<double>(nodes.size());
}

double margin_loss(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::size_t>& nodes,
                   double gamma) {
  if (!(gamma >= 0.0)) throw ContractError("margin_loss: gamma must be >= 0");
  if (nodes.empty()) return 0.0;
  std::size_t bad = 0;
  for (std::size_t i : nodes) {
    const auto r = logits.row(i);
    const auto y = static_cast<std::size_t>(labels.at(i));
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < r.size(); ++c)
      if (c != y) other = std::max(other, r[c]);
    bad += r[y] <= gamma + other ? 1 : 0;
  }
  return static_cast<double>(bad) / static_cast<double>(nodes.size());
}

double epsilon_distance(const Tensor& g_train, const Tensor& g_test) {
  if (g_train.rows() == 0 || g_test.rows() == 0) throw ContractError("epsilon_distance: empty node set");
  if (g_train.cols() != g_test.cols()) throw ContractError("epsilon_distance: dimension mismatch");
  double worst = 0.0;
  for (std::size_t j = 0; j < g_test.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g_train.rows(); ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < g_test.cols(); ++d) {
        const double diff = g_test(j, d) - g_train(i, d);
        s += diff * diff;
      }
      best = std::min(best, s);
    }
    worst = std::max(worst, std::sqrt(best));
  }
  return worst;
}

Tensor mean_aggregate(const Graph& g) {
  const auto p = AdjacencyPattern::from_graph(g);
  Tensor out(g.num_nodes, g.feature_dim());
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    auto orow = out.row(i);
    for (std::size_t k = p.loop_row_ptr[i]; k < p.loop_row_ptr[i + 1]; ++k) {
      const auto src = g.features.row(p.loop_col[k]);
      for (std::size_t d = 0; d < orow.size(); ++d) orow[d] += src[d];
    }
    const double n = static_cast<double>(p.loop_row_ptr[i + 1] - p.loop_row_ptr[i]);
    for (auto& x : orow) x /= n;
  }
  return out;
}

Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out(rows.size(), t.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy(t.row(rows[k]).begin(), t.row(rows[k]).end(), out.row(k).begin());
  return out;
}

}  // namespace goodlab
