#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pheye/tensor.hpp"

namespace pheye {

// Per-call state threaded through every forward pass. The ledger is owned by
// the caller so concurrent forwards can each keep their own and merge later.
struct ForwardContext {
    MulLedger& ledger;
    bool train = false;
    Rng* dropout_rng = nullptr;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using NamedTensors = std::vector<NamedTensor>;

void append_named(NamedTensors& out, const std::string& prefix, const NamedTensors& items);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear random(std::size_t in, std::size_t out, Rng& rng, double stddev, bool trainable);
    static Linear zeros(std::size_t in, std::size_t out, bool trainable);

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    Tensor operator()(const Tensor& x, MulCategory category, MulLedger& ledger) const;
    NamedTensors named(const std::string& prefix) const;
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;

    static LayerNormParams identity(std::size_t dim, bool trainable);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
    NamedTensors named(const std::string& prefix) const;
};

// Attention weights of one call, [heads][query][key].
using AttentionProbs = std::vector<std::vector<std::vector<double>>>;

// Multi-head scaled dot-product attention over already projected q [nq, D],
// k [nk, D], v [nk, D]. Score matmuls are tallied as attention_scores and the
// probability-value matmuls as attention_values.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal,
                            MulLedger& ledger, AttentionProbs* record = nullptr);

// Sinusoidal position table [n, d]; frozen and length-independent.
Tensor sinusoidal_positions(std::size_t n, std::size_t d);

}  // namespace pheye
