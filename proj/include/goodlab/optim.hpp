#pragma once

#include <string>
#include <vector>

#include "goodlab/tensor.hpp"

namespace goodlab {

struct AdamHyper {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Throws DivergenceError naming the first non-finite gradient.
void check_finite_grads(const std::vector<Tensor>& grads, const std::vector<std::string>& names = {});

void sgd_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);

class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
            const std::vector<std::string>& names = {});
  long long steps() const { return t_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  AdamHyper hyper_;
  long long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace goodlab
