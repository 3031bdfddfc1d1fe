#include "crayon/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace crayon {

Optimizer::Optimizer(std::vector<ag::Var> params, OptimizerConfig config)
    : params_(std::move(params)), config_(std::move(config)) {
    if (config_.kind != "adam" && config_.kind != "sgd") {
        throw std::invalid_argument("unknown optimizer kind: " + config_.kind);
    }
    if (config_.learning_rate < 0 || config_.weight_decay < 0) {
        throw std::invalid_argument("optimizer learning rate and weight decay must be non-negative");
    }
    for (const auto& p : params_) {
        m_.emplace_back(p.dims(), 0.0);
        v_.emplace_back(p.dims(), 0.0);
    }
}

void Optimizer::step(const std::vector<ag::Var>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("optimizer: gradient count mismatch");
    ++t_;
    const double lr = config_.learning_rate;
    const double wd = config_.weight_decay;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i].mutable_value();
        const Tensor& g = grads[i].value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        if (config_.kind == "adam") {
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = g[j] + wd * p[j];
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
                v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
                const double denom = std::sqrt(v[j] / bc2) + config_.epsilon;
                p[j] -= lr * (m[j] / bc1) / denom;
            }
        } else {
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = g[j] + wd * p[j];
                if (config_.momentum != 0.0) {
                    m[j] = config_.momentum * m[j] + gj;
                    gj = m[j];
                }
                p[j] -= lr * gj;
            }
        }
    }
}

}  // namespace crayon
