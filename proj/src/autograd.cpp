#include "crayon/autograd.hpp"

#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "crayon/ops.hpp"

namespace crayon::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

Var Var::constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Tensor& Var::mutable_value() {
    if (!node_ || !node_->inputs.empty()) {
        throw std::logic_error("mutable_value is only available on leaf variables");
    }
    return node_->value;
}

Var Var::make(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    if (g_grad_enabled) {
        for (const auto& in : inputs) {
            if (in.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph) {
    if (!output) throw std::invalid_argument("grad: undefined output");
    if (output.value().size() != 1) {
        throw std::invalid_argument("grad: output must be a scalar, got " + dims_to_string(output.dims()));
    }

    std::unordered_set<const Node*> targets;
    for (const auto& in : inputs) {
        if (in) targets.insert(in.node());
    }

    // Post-order over nodes that lie on a path from output to some target.
    std::unordered_map<const Node*, bool> relevant;
    std::vector<Node*> order;
    struct Frame {
        Node* node;
        std::size_t next;
    };
    std::vector<Frame> stack;
    if (output.requires_grad()) stack.push_back({output.node(), 0});
    std::unordered_set<const Node*> visiting;
    if (!stack.empty()) visiting.insert(output.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->inputs.size()) {
            Node* child = f.node->inputs[f.next++].node();
            if (child->requires_grad && !relevant.count(child) && !visiting.count(child)) {
                visiting.insert(child);
                stack.push_back({child, 0});
            }
            continue;
        }
        bool rel = targets.count(f.node) > 0;
        for (const auto& in : f.node->inputs) {
            auto it = relevant.find(in.node());
            if (it != relevant.end() && it->second) rel = true;
        }
        relevant[f.node] = rel;
        if (rel) order.push_back(f.node);
        stack.pop_back();
    }

    GradModeGuard mode(create_graph);
    std::unordered_map<const Node*, Var> grads;
    if (!order.empty()) {
        grads[output.node()] = Var::constant(Tensor(output.dims(), 1.0));
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto git = grads.find(node);
        if (git == grads.end() || !node->backward) continue;
        Var g = git->second;
        std::vector<bool> needed(node->inputs.size(), false);
        bool any = false;
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const Node* child = node->inputs[i].node();
            auto r = relevant.find(child);
            needed[i] = child->requires_grad && r != relevant.end() && r->second;
            any = any || needed[i];
        }
        if (!any) continue;
        std::vector<Var> in_grads = node->backward(g, needed);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            if (!needed[i] || !in_grads[i]) continue;
            const Node* child = node->inputs[i].node();
            auto cur = grads.find(child);
            if (cur == grads.end()) {
                grads.emplace(child, in_grads[i]);
            } else {
                cur->second = add(cur->second, in_grads[i]);
            }
        }
        // Intermediate gradients are no longer needed once propagated.
        if (!targets.count(node)) grads.erase(node);
    }

    std::vector<Var> result;
    result.reserve(inputs.size());
    for (const auto& in : inputs) {
        auto it = in ? grads.find(in.node()) : grads.end();
        if (it != grads.end()) {
            result.push_back(it->second);
        } else {
            result.push_back(Var::constant(Tensor(in ? in.dims() : Dims{1}, 0.0)));
        }
    }
    return result;
}

}  // namespace crayon::ag
