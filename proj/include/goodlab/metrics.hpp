#pragma once

#include <vector>

#include "goodlab/graph.hpp"
#include "goodlab/tensor.hpp"

namespace goodlab {

// Argmax with ties resolved to the lowest class index.
std::size_t argmax_row(const Tensor& logits, std::size_t row);

double ood_accuracy(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::size_t>& nodes);

// Mean over classes (with >= 2 selected nodes) of the population trace
// covariance of the first half of the representation.
double invariant_variance(const Tensor& reps, const std::vector<int>& labels, const std::vector<std::size_t>& nodes);

// Mean L2 norm of the second half of the representation.
double spurious_norm(const Tensor& reps, const std::vector<std::size_t>& nodes);

// Fraction of nodes with h[y] <= gamma + max_{c != y} h[c].
double margin_loss(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::size_t>& nodes,
                   double gamma);

// max over test rows of min over train rows of the L2 distance.
double epsilon_distance(const Tensor& g_train, const Tensor& g_test);

// One mean-aggregation layer over the closed neighborhood: row-normalized (A + I) X.
Tensor mean_aggregate(const Graph& g);

Tensor select_rows(const Tensor& t, const std::vector<std::size_t>& rows);

}  // namespace goodlab
