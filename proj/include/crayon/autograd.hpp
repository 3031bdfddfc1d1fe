#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// Every backward rule is written in terms of differentiable ops, so calling
// grad(..., create_graph = true) yields gradients that are themselves part of
// the graph and can be differentiated again. Grad-CAM-guided training relies
// on this: the saliency map contains d(score)/d(features), and the training
// loss is differentiated through it.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crayon/tensor.hpp"

namespace crayon::ag {

class Var;

// Receives the upstream gradient and a per-input "needed" mask; returns one
// gradient per input (a null Var where not needed).
using BackwardFn = std::function<std::vector<Var>(const Var& grad, const std::vector<bool>& needed)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
    const char* op = "leaf";
};

class Var {
  public:
    Var() = default;

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    const Tensor& value() const { return node_->value; }
    // Leaf parameters only; used by optimizers between graph constructions.
    Tensor& mutable_value();
    const Dims& dims() const { return node_->value.dims(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    explicit operator bool() const { return defined(); }
    Node* node() const { return node_.get(); }
    const char* op() const { return node_->op; }

    // Records an op result. The node only keeps its inputs and backward rule
    // when grad mode is on and some input requires grad.
    static Var make(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

  private:
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    std::shared_ptr<Node> node_;
};

bool grad_enabled();

// RAII switch for graph recording on the current thread.
class GradModeGuard {
  public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

  private:
    bool previous_;
};

class NoGradGuard : public GradModeGuard {
  public:
    NoGradGuard() : GradModeGuard(false) {}
};

// Gradients of a scalar (single-element) output with respect to `inputs`.
// Inputs the output does not depend on receive zero tensors. With
// create_graph the returned Vars carry their own graph.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph = false);

}  // namespace crayon::ag
