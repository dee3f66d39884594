#include "goodlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "goodlab/errors.hpp"

namespace goodlab {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "leaf";
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "const";
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, const char* op, const std::vector<Var>& inputs, Backward backward) {
  if (!value.all_finite()) {
    throw DivergenceError(std::string("non-finite value produced by ") + op + " " + value.shape_string());
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError(std::string(op) + ": inputs from a different tape");
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.has_grad) {
    static thread_local Tensor zeros;
    zeros = Tensor::zeros_like(n.value);
    return zeros;
  }
  return n.grad;
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ContractError("backward: root from a different tape");
  if (nodes_[root.id].value.size() != 1) {
    throw ContractError("backward: root must be scalar, got " + nodes_[root.id].value.shape_string());
  }
  for (auto& n : nodes_) n.has_grad = false;
  grad_slot(root.id).fill(1.0);
  for (std::size_t k = root.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, k, n.grad);
  }
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.value().shape() != b.value().shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                        b.value().shape_string());
  }
}

void require_scalar(const char* op, Var s) {
  if (s.value().size() != 1) throw ContractError(std::string(op) + ": expected 1x1, got " + s.value().shape_string());
}

void require_vector_len(const char* op, Var v, std::size_t n) {
  if (v.cols() != 1 || v.rows() != n) {
    throw ContractError(std::string(op) + ": expected [" + std::to_string(n) + "x1], got " + v.value().shape_string());
  }
}

void accumulate(Tape& t, Var v, const Tensor& g) {
  if (t.requires_grad(v.id)) t.grad_slot(v.id) += g;
}

// out += A^T g for CSR structure s with values vals.
void spmm_transpose_into(const CsrMatrix& s, std::span<const double> vals, const Tensor& g, Tensor& out) {
  for (std::size_t i = 0; i < s.rows; ++i) {
    const auto grow = g.row(i);
    for (std::size_t k = s.row_ptr[i]; k < s.row_ptr[i + 1]; ++k) {
      auto orow = out.row(s.col[k]);
      const double a = vals[k];
      for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += a * grow[c];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

CsrPtr plain_structure(const AdjacencyPattern& p) {
  auto m = std::make_shared<CsrMatrix>();
  m->rows = m->cols = p.num_nodes;
  m->row_ptr = p.row_ptr;
  m->col = p.col;
  m->val.assign(p.col.size(), 1.0);
  return m;
}

CsrPtr loop_structure(const AdjacencyPattern& p) {
  auto m = std::make_shared<CsrMatrix>();
  m->rows = m->cols = p.num_nodes;
  m->row_ptr = p.loop_row_ptr;
  m->col = p.loop_col;
  m->val.assign(p.loop_col.size(), 1.0);
  return m;
}

Var matmul(Var a, Var b) {
  Tensor out = goodlab::matmul(a.value(), b.value());
  return a.tape->push(std::move(out), "matmul", {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(a.id)) t.grad_slot(a.id) += goodlab::matmul(g, transpose(b.value()));
    if (t.requires_grad(b.id)) t.grad_slot(b.id) += goodlab::matmul(transpose(a.value()), g);
  });
}

Var spmm(const CsrPtr& a, Var x) {
  Tensor out = a->multiply(x.value());
  return x.tape->push(std::move(out), "spmm", {x}, [a, x](Tape& t, std::size_t, const Tensor& g) {
    spmm_transpose_into(*a, a->val, g, t.grad_slot(x.id));
  });
}

Var spmm_values(const CsrPtr& s, Var values, Var x) {
  require_vector_len("spmm_values", values, s->nnz());
  if (x.rows() != s->cols) throw ContractError("spmm_values: dense operand " + x.value().shape_string());
  const Tensor& v = values.value();
  const Tensor& xv = x.value();
  Tensor out(s->rows, xv.cols());
  for (std::size_t i = 0; i < s->rows; ++i) {
    auto orow = out.row(i);
    for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) {
      const auto xrow = xv.row(s->col[k]);
      for (std::size_t c = 0; c < orow.size(); ++c) orow[c] += v[k] * xrow[c];
    }
  }
  return x.tape->push(std::move(out), "spmm_values", {values, x},
                      [s, values, x](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& v = values.value();
    const Tensor& xv = x.value();
    if (t.requires_grad(x.id)) spmm_transpose_into(*s, v.values(), g, t.grad_slot(x.id));
    if (t.requires_grad(values.id)) {
      Tensor& gv = t.grad_slot(values.id);
      for (std::size_t i = 0; i < s->rows; ++i) {
        const auto grow = g.row(i);
        for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) {
          const auto xrow = xv.row(s->col[k]);
          double d = 0.0;
          for (std::size_t c = 0; c < grow.size(); ++c) d += grow[c] * xrow[c];
          gv[k] += d;
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  out += b.value();
  return a.tape->push(std::move(out), "add", {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->push(std::move(out), "sub", {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    accumulate(t, a, g);
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var scale(Var a, double k) {
  Tensor out = a.value();
  for (auto& x : out.values()) x *= k;
  return a.tape->push(std::move(out), "scale", {a}, [a, k](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

Var add_scalar(Var a, double k) {
  Tensor out = a.value();
  for (auto& x : out.values()) x += k;
  return a.tape->push(std::move(out), "add_scalar", {a},
                      [a](Tape& t, std::size_t, const Tensor& g) { accumulate(t, a, g); });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->push(std::move(out), "hadamard", {a, b}, [a, b](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_slot(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var scalar_mul(Var s, Var a) {
  require_scalar("scalar_mul", s);
  const double k = s.value()[0];
  Tensor out = a.value();
  for (auto& x : out.values()) x *= k;
  return a.tape->push(std::move(out), "scalar_mul", {s, a}, [s, a](Tape& t, std::size_t, const Tensor& g) {
    const double k = s.value()[0];
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_slot(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
    }
    if (t.requires_grad(s.id)) {
      double d = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) d += g[i] * a.value()[i];
      t.grad_slot(s.id)[0] += d;
    }
  });
}

Var add_row_bias(Var x, Var bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ContractError("add_row_bias: bias " + bias.value().shape_string() + " for input " +
                        x.value().shape_string());
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) += bias.value()[c];
  return x.tape->push(std::move(out), "add_row_bias", {x, bias}, [x, bias](Tape& t, std::size_t, const Tensor& g) {
    accumulate(t, x, g);
    if (t.requires_grad(bias.id)) {
      Tensor& gb = t.grad_slot(bias.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(i, c);
    }
  });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var leaky_relu(Var a, double slope) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = x > 0.0 ? x : slope * x;
  return a.tape->push(std::move(out), slope == 0.0 ? "relu" : "leaky_relu", {a},
                      [a, slope](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a.value()[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = stable_sigmoid(x);
  return a.tape->push(std::move(out), "sigmoid", {a}, [a](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

namespace {
Tensor softmax_rows(const Tensor& z) {
  Tensor p = z;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto r = p.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (auto& x : r) s += (x = std::exp(x - m));
    for (auto& x : r) x /= s;
  }
  return p;
}
}  // namespace

Var row_softmax(Var a) {
  return a.tape->push(softmax_rows(a.value()), "row_softmax", {a}, [a](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(i, c) * y(i, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(i, c) += y(i, c) * (g(i, c) - dot);
    }
  });
}

Var cross_entropy_with_logits(Var logits, const std::vector<int>& labels) {
  const Tensor& z = logits.value();
  if (labels.size() != z.rows() || z.rows() == 0) {
    throw ContractError("cross_entropy_with_logits: " + std::to_string(labels.size()) + " labels for logits " +
                        z.shape_string());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols()) {
      throw ContractError("cross_entropy_with_logits: label out of range at row " + std::to_string(i));
    }
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double x : r) s += std::exp(x - m);
    total += m + std::log(s) - r[static_cast<std::size_t>(labels[i])];
  }
  const double n = static_cast<double>(z.rows());
  return logits.tape->push(Tensor::scalar(total / n), "cross_entropy", {logits},
                           [logits, labels, n](Tape& t, std::size_t, const Tensor& g) {
    Tensor p = softmax_rows(logits.value());
    Tensor& gz = t.grad_slot(logits.id);
    const double k = g[0] / n;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      p(i, static_cast<std::size_t>(labels[i])) -= 1.0;
      for (std::size_t c = 0; c < p.cols(); ++c) gz(i, c) += k * p(i, c);
    }
  });
}

Var mse(Var pred, Var target) {
  require_same_shape("mse", pred, target);
  if (pred.value().size() == 0) throw ContractError("mse: empty input");
  return mean(hadamard(sub(pred, target), sub(pred, target)));
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return a.tape->push(Tensor::scalar(s), "sum", {a}, [a](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (auto& x : ga.values()) x += g[0];
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ContractError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var population_variance(Var a) {
  const Tensor& v = a.value();
  const std::size_t n = v.size();
  if (n == 0) throw ContractError("population_variance: empty input");
  double mu = 0.0;
  for (double x : v.values()) mu += x;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v.values()) var += (x - mu) * (x - mu);
  var /= static_cast<double>(n);
  return a.tape->push(Tensor::scalar(var), "population_variance", {a},
                      [a, mu, n](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    const double k = 2.0 * g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ga[i] += k * (a.value()[i] - mu);
  });
}

Var sq_l2_norm(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x * x;
  return a.tape->push(Tensor::scalar(s), "sq_l2_norm", {a}, [a](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g[0] * a.value()[i];
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Tensor& v = a.value();
  Tensor out(rows.size(), v.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= v.rows()) throw ContractError("gather_rows: row " + std::to_string(rows[k]) + " out of range");
    std::copy(v.row(rows[k]).begin(), v.row(rows[k]).end(), out.row(k).begin());
  }
  return a.tape->push(std::move(out), "gather_rows", {a}, [a, rows](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto dst = ga.row(rows[k]);
      const auto src = g.row(k);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var row_sum(Var a) {
  const Tensor& v = a.value();
  Tensor out(v.rows(), 1);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (double x : v.row(i)) out[i] += x;
  return a.tape->push(std::move(out), "row_sum", {a}, [a](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (auto& x : ga.row(i)) x += g[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ContractError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  return parts[0].tape->push(std::move(out), "concat_rows", parts, [parts](Tape& t, std::size_t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.value().size();
      if (t.requires_grad(p.id)) {
        Tensor& gp = t.grad_slot(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw ContractError("concat_cols: row mismatch");
  const std::size_t ca = a.cols(), cb = b.cols();
  Tensor out(a.rows(), ca + cb);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    std::copy(a.value().row(i).begin(), a.value().row(i).end(), out.row(i).begin());
    std::copy(b.value().row(i).begin(), b.value().row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return a.tape->push(std::move(out), "concat_cols", {a, b}, [a, b, ca, cb](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_slot(a.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t c = 0; c < ca; ++c) ga(i, c) += g(i, c);
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t c = 0; c < cb; ++c) gb(i, c) += g(i, ca + c);
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ContractError("slice_cols: bad range");
  Tensor out(a.rows(), end - begin);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = begin; c < end; ++c) out(i, c - begin) = a.value()(i, c);
  return a.tape->push(std::move(out), "slice_cols", {a}, [a, begin, end](Tape& t, std::size_t, const Tensor& g) {
    Tensor& ga = t.grad_slot(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t c = begin; c < end; ++c) ga(i, c) += g(i, c - begin);
  });
}

Var segment_softmax(const CsrPtr& s, Var scores) {
  require_vector_len("segment_softmax", scores, s->nnz());
  Tensor out = scores.value();
  for (std::size_t i = 0; i < s->rows; ++i) {
    const std::size_t b = s->row_ptr[i], e = s->row_ptr[i + 1];
    if (b == e) continue;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = b; k < e; ++k) m = std::max(m, out[k]);
    double z = 0.0;
    for (std::size_t k = b; k < e; ++k) z += (out[k] = std::exp(out[k] - m));
    for (std::size_t k = b; k < e; ++k) out[k] /= z;
  }
  return scores.tape->push(std::move(out), "segment_softmax", {scores},
                           [s, scores](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gs = t.grad_slot(scores.id);
    for (std::size_t i = 0; i < s->rows; ++i) {
      double dot = 0.0;
      for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) dot += g[k] * y[k];
      for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) gs[k] += y[k] * (g[k] - dot);
    }
  });
}

Var row_normalize_entries(const CsrPtr& s, Var v) {
  require_vector_len("row_normalize_entries", v, s->nnz());
  Tensor out = v.value();
  std::vector<double> sums(s->rows, 0.0);
  for (std::size_t i = 0; i < s->rows; ++i) {
    for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) sums[i] += out[k];
    for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) out[k] /= sums[i];
  }
  return v.tape->push(std::move(out), "row_normalize_entries", {v},
                      [s, v, sums](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& gv = t.grad_slot(v.id);
    for (std::size_t i = 0; i < s->rows; ++i) {
      double dot = 0.0;
      for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) dot += g[k] * y[k];
      for (std::size_t k = s->row_ptr[i]; k < s->row_ptr[i + 1]; ++k) gv[k] += (g[k] - dot) / sums[i];
    }
  });
}

Var minmax_normalize(Var v) {
  const Tensor& x = v.value();
  if (x.size() == 0) return v.tape->constant(Tensor(x.rows(), x.cols()));
  const auto [lo_it, hi_it] = std::minmax_element(x.values().begin(), x.values().end());
  const std::size_t imin = static_cast<std::size_t>(lo_it - x.values().begin());
  const std::size_t imax = static_cast<std::size_t>(hi_it - x.values().begin());
  const double lo = *lo_it, hi = *hi_it, range = hi - lo;
  if (range < 1e-12) return v.tape->constant(Tensor(x.rows(), x.cols(), 1.0));
  Tensor out = x;
  for (auto& e : out.values()) e = (e - lo) / range;
  return v.tape->push(std::move(out), "minmax_normalize", {v},
                      [v, imin, imax, lo, hi, range](Tape& t, std::size_t, const Tensor& g) {
    const Tensor& x = v.value();
    Tensor& gv = t.grad_slot(v.id);
    double g_lo = 0.0, g_hi = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      gv[k] += g[k] / range;
      g_lo += g[k] * (x[k] - hi) / (range * range);
      g_hi -= g[k] * (x[k] - lo) / (range * range);
    }
    gv[imin] += g_lo;
    gv[imax] += g_hi;
  });
}

Var clamp(Var v, double lo, double hi) {
  Tensor out = v.value();
  for (auto& e : out.values()) e = std::clamp(e, lo, hi);
  return v.tape->push(std::move(out), "clamp", {v}, [v, lo, hi](Tape& t, std::size_t, const Tensor& g) {
    Tensor& gv = t.grad_slot(v.id);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double x = v.value()[k];
      if (x >= lo && x <= hi) gv[k] += g[k];
    }
  });
}

Var normalized_adjacency_values(const PatternPtr& p, Var w) {
  require_vector_len("normalized_adjacency_values", w, p->num_edges);
  const std::size_t n = p->num_nodes;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = p->row_ptr[i]; k < p->row_ptr[i + 1]; ++k) deg[i] += w.value()[p->edge_of[k]];
  Tensor out(p->loop_col.size(), 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = p->loop_row_ptr[i]; k < p->loop_row_ptr[i + 1]; ++k) {
      const std::size_t j = p->loop_col[k];
      const std::size_t e = p->loop_edge_of[k];
      out[k] = e == AdjacencyPattern::kSelf ? 1.0 / (deg[i] + 1.0)
                                            : w.value()[e] / std::sqrt((deg[i] + 1.0) * (deg[j] + 1.0));
    }
  }
  return w.tape->push(std::move(out), "normalized_adjacency", {w}, [p, w, deg](Tape& t, std::size_t, const Tensor& g) {
    const std::size_t n = p->num_nodes;
    std::vector<double> s(n), gs(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) s[i] = 1.0 / std::sqrt(deg[i] + 1.0);
    Tensor& gw = t.grad_slot(w.id);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = p->loop_row_ptr[i]; k < p->loop_row_ptr[i + 1]; ++k) {
        const std::size_t j = p->loop_col[k];
        const std::size_t e = p->loop_edge_of[k];
        if (e == AdjacencyPattern::kSelf) {
          gs[i] += 2.0 * g[k] * s[i];
        } else {
          const double we = w.value()[e];
          gw[e] += g[k] * s[i] * s[j];
          gs[i] += g[k] * we * s[j];
          gs[j] += g[k] * we * s[i];
        }
      }
    }
    // ds/ddeg = -s^3 / 2, and each edge weight enters both endpoint degrees.
    for (std::size_t i = 0; i < n; ++i) {
      const double gdeg = -0.5 * gs[i] * s[i] * s[i] * s[i];
      for (std::size_t k = p->row_ptr[i]; k < p->row_ptr[i + 1]; ++k) gw[p->edge_of[k]] += gdeg;
    }
  });
}

double gradcheck(const ScalarFn& f, const std::vector<Tensor>& point, double eps) {
  Tape tape;
  std::vector<Var> params;
  for (const Tensor& p : point) params.push_back(tape.leaf(p));
  const Var out = f(tape, params);
  tape.backward(out);
  std::vector<Tensor> analytic;
  for (const Var& p : params) analytic.push_back(p.grad());

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape t;
    std::vector<Var> vs;
    for (const Tensor& p : pts) vs.push_back(t.leaf(p));
    return f(t, vs).value().item();
  };

  double worst = 0.0;
  std::vector<Tensor> probe = point;
  for (std::size_t a = 0; a < point.size(); ++a) {
    for (std::size_t i = 0; i < point[a].size(); ++i) {
      const double x0 = point[a][i];
      probe[a][i] = x0 + eps;
      const double fp = eval(probe);
      probe[a][i] = x0 - eps;
      const double fm = eval(probe);
      probe[a][i] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double an = analytic[a][i];
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(an - numeric) / denom);
    }
  }
  return worst;
}

double gradcheck(const std::function<Var(Tape&, Var)>& f, const Tensor& point, double eps) {
  return gradcheck([&](Tape& t, const std::vector<Var>& v) { return f(t, v[0]); }, std::vector<Tensor>{point}, eps);
}

}  // namespace goodlab
