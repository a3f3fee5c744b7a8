#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pheye/errors.hpp"

namespace pheye {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// ---------------------------------------------------------------------------
// Rng
//
// mt19937_64 has a fully specified output sequence, so the stream is
// reproducible across standard libraries. Uniforms take the top 53 bits.
// Normals use the basic Box-Muller transform:
//   z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)
// with u1 in (0, 1]; z1 is cached and returned by the next call.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    // [0, 1)
    double uniform();
    // [0, n)
    std::size_t uniform_index(std::size_t n);
    double normal(double mean = 0.0, double stddev = 1.0);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// ---------------------------------------------------------------------------
// MulLedger: multiplication tallies for matmuls, split by role.
// ---------------------------------------------------------------------------
enum class MulCategory : std::size_t {
    projection = 0,
    attention_scores,
    attention_values,
    feedforward,
    other,
};

inline constexpr std::size_t kMulCategoryCount = 5;
inline constexpr std::array<MulCategory, kMulCategoryCount> kAllMulCategories = {
    MulCategory::projection, MulCategory::attention_scores, MulCategory::attention_values,
    MulCategory::feedforward, MulCategory::other};

std::string_view to_string(MulCategory category);

// Not thread-safe; use one ledger per thread and merge with +=.
class MulLedger {
public:
    void add(MulCategory category, std::uint64_t count) {
        counts_[static_cast<std::size_t>(category)] += count;
    }
    std::uint64_t get(MulCategory category) const {
        return counts_[static_cast<std::size_t>(category)];
    }
    std::uint64_t total() const;
    void reset() { counts_.fill(0); }

    MulLedger& operator+=(const MulLedger& other);
    bool operator==(const MulLedger& other) const = default;

private:
    std::array<std::uint64_t, kMulCategoryCount> counts_{};
};

namespace detail {
struct Node;
}

// ---------------------------------------------------------------------------
// Tensor: shared handle to a dense row-major float64 array that can take part
// in a reverse-mode graph. Copies alias the same storage.
// ---------------------------------------------------------------------------
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad = false);
    static Tensor identity(std::size_t n);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    // Writable view for optimizer updates and explicit parameter edits.
    // Does not participate in the graph.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t row, std::size_t col) const;
    std::vector<double> to_vector() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const;

    bool has_grad() const;
    // Empty span when no gradient has been accumulated.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    // calls; intermediate buffers are reset at the start of each call.
    void backward() const;

    // Copy of the values detached from any graph.
    Tensor detach() const;

    const detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;

    friend struct OpBuilder;
};

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

// (n x d) @ (d x o); adds n*o*d to `category`.
Tensor matmul(const Tensor& a, const Tensor& b, MulCategory category, MulLedger& ledger);

Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
// x[..., d] + bias[d]
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
// Sets entries above the diagonal of a square score matrix to -inf.
Tensor causal_mask(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Row gather: table[ids[i], :].
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Sum of -log softmax(logits[i])[targets[i]] over rows with mask[i] set.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets,
                         const std::vector<bool>& mask);

// ---------------------------------------------------------------------------
// Central differences, coordinate by coordinate. `p` is perturbed in place and
// restored exactly after each evaluation.
// ---------------------------------------------------------------------------
using ScalarFunction = std::function<double(const Tensor&)>;

Tensor finite_difference_grad(const ScalarFunction& f, Tensor p, double step = 1e-5);
// Same, restricted to `coords`; other entries of the result are zero.
Tensor finite_difference_grad(const ScalarFunction& f, Tensor p, double step,
                              std::span<const std::size_t> coords);

}  // namespace pheye
