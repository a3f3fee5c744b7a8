#include "pheye/tensor.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tensor_internal.hpp"

namespace pheye {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// --- Rng --------------------------------------------------------------------

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw InputError("uniform_index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

double Rng::normal(double mean, double stddev) {
    if (has_cached_) {
        has_cached_ = false;
        return mean + stddev * cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return mean + stddev * radius * std::cos(angle);
}

// --- MulLedger --------------------------------------------------------------

std::string_view to_string(MulCategory category) {
    switch (category) {
        case MulCategory::projection: return "projection";
        case MulCategory::attention_scores: return "attention_scores";
        case MulCategory::attention_values: return "attention_values";
        case MulCategory::feedforward: return "feedforward";
        case MulCategory::other: return "other";
    }
    return "unknown";
}

std::uint64_t MulLedger::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

MulLedger& MulLedger::operator+=(const MulLedger& other) {
    for (std::size_t i = 0; i < kMulCategoryCount; ++i) counts_[i] += other.counts_[i];
    return *this;
}

// --- Tensor -----------------------------------------------------------------

namespace {

void check_shape(const Shape& shape) {
    for (auto extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
    }
}

const detail::Node& checked(const detail::Node* node) {
    if (!node) throw ContractError("use of an undefined tensor");
    return *node;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    check_shape(shape);
    Tensor t = OpBuilder::make(shape, std::vector<double>(shape_numel(shape), value));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    Tensor t = OpBuilder::make(shape, std::move(values));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
    check_shape(shape);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = rng.normal(0.0, stddev);
    return from(shape, std::move(values), requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return t;
}

const Shape& Tensor::shape() const { return checked(node_.get()).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_.get()).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_.get()).data; }

std::span<double> Tensor::mutable_data() {
    checked(node_.get());
    return node_->data;
}

double Tensor::item() const {
    const auto& n = checked(node_.get());
    if (n.data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(n.shape));
    return n.data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    const auto& n = checked(node_.get());
    if (n.shape.size() != 2 || row >= n.shape[0] || col >= n.shape[1]) {
        throw DimensionError("at(" + std::to_string(row) + ", " + std::to_string(col) + ") on " +
                             shape_to_string(n.shape));
    }
    return n.data[row * n.shape[1] + col];
}

std::vector<double> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return checked(node_.get()).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    checked(node_.get());
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
    node_->requires_grad = value;
    if (!value) node_->grad.clear();
    return *this;
}

bool Tensor::is_leaf() const { return checked(node_.get()).is_leaf(); }

bool Tensor::has_grad() const { return !checked(node_.get()).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_.get()).grad; }

std::span<double> Tensor::mutable_grad() {
    checked(node_.get());
    return node_->grad;
}

void Tensor::zero_grad() {
    checked(node_.get());
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_.get());
    return OpBuilder::make(n.shape, n.data);
}

void Tensor::backward() const {
    const auto& root = checked(node_.get());
    if (root.data.size() != 1 || !root.shape.empty()) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_to_string(root.shape));
    }
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
    for (auto* node : order) {
        if (!node->is_leaf()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

// --- finite differences -----------------------------------------------------

Tensor finite_difference_grad(const ScalarFunction& f, Tensor p, double step) {
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    return finite_difference_grad(f, std::move(p), step, coords);
}

Tensor finite_difference_grad(const ScalarFunction& f, Tensor p, double step,
                              std::span<const std::size_t> coords) {
    if (!(step > 0.0)) throw InputError("finite difference step must be positive");
    std::vector<double> out(p.numel(), 0.0);
    auto values = p.mutable_data();
    for (auto i : coords) {
        if (i >= values.size()) throw DimensionError("finite difference coordinate out of range");
        const double original = values[i];
        values[i] = original + step;
        const double plus = f(p);
        values[i] = original - step;
        const double minus = f(p);
        values[i] = original;
        out[i] = (plus - minus) / (2.0 * step);
    }
    return Tensor::from(p.shape(), std::move(out));
}

}  // namespace pheye
