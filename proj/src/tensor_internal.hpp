#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pheye/tensor.hpp"

namespace pheye {
namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents that require gradients.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

struct OpBuilder {
    static Tensor make(Shape shape, std::vector<double> data) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        return Tensor(std::move(node));
    }

    // Result of an operation. The graph edge is only kept when some input
    // requires gradients.
    static Tensor make(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                       std::function<void(detail::Node&)> backward_fn) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        bool needs = false;
        for (const auto& t : inputs) needs = needs || t.node_->requires_grad;
        if (needs) {
            node->requires_grad = true;
            for (auto& t : inputs) node->parents.push_back(t.node_);
            node->backward_fn = std::move(backward_fn);
        }
        return Tensor(std::move(node));
    }

    static detail::Node& node(const Tensor& t) { return *t.node_; }
};

}  // namespace pheye
