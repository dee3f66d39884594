#include "goodlab/optim.hpp"

#include <cmath>

#include "goodlab/errors.hpp"

namespace goodlab {

void check_finite_grads(const std::vector<Tensor>& grads, const std::vector<std::string>& names) {
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k].all_finite()) {
      const std::string name = k < names.size() ? names[k] : "#" + std::to_string(k);
      throw DivergenceError("non-finite gradient for parameter " + name + " " + grads[k].shape_string());
    }
  }
}

namespace {
void require_match(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ContractError("optimizer: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k].shape()) {
      throw ContractError("optimizer: parameter " + params[k]->shape_string() + " vs gradient " +
                          grads[k].shape_string());
    }
  }
}
}  // namespace

void sgd_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
  require_match(params, grads);
  check_finite_grads(grads);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < grads[k].size(); ++i) (*params[k])[i] -= lr * grads[k][i];
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                const std::vector<std::string>& names) {
  require_match(params, grads);
  check_finite_grads(grads, names);
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.push_back(Tensor::zeros_like(*p));
      v_.push_back(Tensor::zeros_like(*p));
    }
  } else if (m_.size() != params.size()) {
    throw ContractError("Adam: parameter set changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[k][i] + hyper_.weight_decay * p[i];
      m_[k][i] = hyper_.beta1 * m_[k][i] + (1.0 - hyper_.beta1) * g;
      v_[k][i] = hyper_.beta2 * v_[k][i] + (1.0 - hyper_.beta2) * g * g;
      p[i] -= hyper_.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + hyper_.eps);
    }
  }
}

}  // namespace goodlab
