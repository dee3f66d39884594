#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "goodlab/graph.hpp"
#include "goodlab/tensor.hpp"

namespace goodlab {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward() is a single reverse sweep.
class Tape {
 public:
  // `self` is the id of the node being differentiated; its value is the op output.
  using Backward = std::function<void(Tape&, std::size_t self, const Tensor& out_grad)>;

  Tape() = default;
  // Recorded closures hold a pointer to their tape.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);      // differentiable input
  Var constant(Tensor value);  // never receives a gradient

  // Records an op result. Throws DivergenceError if `value` is not finite.
  Var push(Tensor value, const char* op, const std::vector<Var>& inputs, Backward backward);

  // Seeds d(root)/d(root) = 1 and propagates. Root must be 1x1.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  // Zero tensor if the node never received a gradient.
  const Tensor& grad(std::size_t id) const;
  Tensor& grad_slot(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_[id].op; }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::string op;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

using CsrPtr = std::shared_ptr<const CsrMatrix>;
using PatternPtr = std::shared_ptr<const AdjacencyPattern>;

// Structure-only CSR views of a pattern (values unused).
CsrPtr plain_structure(const AdjacencyPattern& p);
CsrPtr loop_structure(const AdjacencyPattern& p);

Var matmul(Var a, Var b);
Var spmm(const CsrPtr& a, Var x);
// Sparse matrix with the structure of `s` and differentiable values (nnz x 1) times x.
Var spmm_values(const CsrPtr& s, Var values, Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var hadamard(Var a, Var b);
// s is 1x1.
Var scalar_mul(Var s, Var a);
Var add_row_bias(Var x, Var bias);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
Var row_softmax(Var a);
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy_with_logits(Var logits, const std::vector<int>& labels);
// Mean squared error over all entries.
Var mse(Var pred, Var target);
Var sum(Var a);
Var mean(Var a);
// Variance (divide by n) over all entries.
Var population_variance(Var a);
Var sq_l2_norm(Var a);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);
Var row_sum(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
// Softmax within each CSR row of `s` over a nnz x 1 score vector.
Var segment_softmax(const CsrPtr& s, Var scores);
// v_k / sum of v over the CSR row of entry k.
Var row_normalize_entries(const CsrPtr& s, Var v);
// (v - min) / (max - min); all ones when the range is below 1e-12.
Var minmax_normalize(Var v);
Var clamp(Var v, double lo, double hi);
// Values of (D_w+I)^-1/2 (A_w + I) (D_w+I)^-1/2 in loop_structure order, for
// one weight per undirected edge (E x 1).
Var normalized_adjacency_values(const PatternPtr& p, Var edge_weights);

// Central-difference check. f maps tape + parameter handles to a 1x1 Var.
// Returns max over coordinates of |a - n| / max(|a|, |n|, 1e-3).
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;
double gradcheck(const ScalarFn& f, const std::vector<Tensor>& point, double eps = 1e-5);
double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& point, double eps = 1e-5);

}  // namespace goodlab
