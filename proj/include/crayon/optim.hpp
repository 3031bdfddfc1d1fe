#pragma once

#include <string>
#include <vector>

#include "crayon/autograd.hpp"

namespace crayon {

struct OptimizerConfig {
    std::string kind = "adam";  // adam | sgd
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;  // L2 term added to the gradient
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.0;  // sgd only
};

class Optimizer {
  public:
    Optimizer(std::vector<ag::Var> params, OptimizerConfig config);

    // grads[i] matches params[i].
    void step(const std::vector<ag::Var>& grads);
    const std::vector<ag::Var>& params() const { return params_; }
    long steps() const { return t_; }

  private:
    std::vector<ag::Var> params_;
    OptimizerConfig config_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long t_ = 0;
};

}  // namespace crayon
