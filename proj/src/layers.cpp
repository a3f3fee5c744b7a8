#include "pheye/layers.hpp"

#include <cmath>

namespace pheye {

void append_named(NamedTensors& out, const std::string& prefix, const NamedTensors& items) {
    for (const auto& item : items) out.push_back({prefix + item.name, item.tensor});
}

Linear Linear::random(std::size_t in, std::size_t out, Rng& rng, double stddev, bool trainable) {
    return {Tensor::randn({in, out}, rng, stddev, trainable), Tensor::zeros({out}, trainable)};
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool trainable) {
    return {Tensor::zeros({in, out}, trainable), Tensor::zeros({out}, trainable)};
}

Tensor Linear::operator()(const Tensor& x, MulCategory category, MulLedger& ledger) const {
    return add_bias(matmul(x, weight, category, ledger), bias);
}

NamedTensors Linear::named(const std::string& prefix) const {
    return {{prefix + ".weight", weight}, {prefix + ".bias", bias}};
}

LayerNormParams LayerNormParams::identity(std::size_t dim, bool trainable) {
    return {Tensor::full({dim}, 1.0, trainable), Tensor::zeros({dim}, trainable)};
}

NamedTensors LayerNormParams::named(const std::string& prefix) const {
    return {{prefix + ".gain", gain}, {prefix + ".bias", bias}};
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal,
                            MulLedger& ledger, AttentionProbs* record) {
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0)) {
        throw DimensionError("attention: q " + shape_to_string(q.shape()) + ", k " + shape_to_string(k.shape()) +
                             ", v " + shape_to_string(v.shape()));
    }
    const std::size_t head_dim = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Tensor> outputs;
    outputs.reserve(heads);
    if (record) record->clear();
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = slice_cols(q, h * head_dim, head_dim);
        const Tensor kh = slice_cols(k, h * head_dim, head_dim);
        const Tensor vh = slice_cols(v, h * head_dim, head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh), MulCategory::attention_scores, ledger), inv_sqrt);
        if (causal) scores = causal_mask(scores);
        const Tensor probs = softmax_rows(scores);
        if (record) {
            const std::size_t nq = probs.dim(0), nk = probs.dim(1);
            auto& head = record->emplace_back(nq);
            for (std::size_t i = 0; i < nq; ++i) {
                head[i].assign(probs.data().begin() + i * nk, probs.data().begin() + (i + 1) * nk);
            }
        }
        outputs.push_back(matmul(probs, vh, MulCategory::attention_values, ledger));
    }
    return heads == 1 ? outputs.front() : concat_cols(outputs);
}

Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
    std::vector<double> values(n * d);
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            values[pos * d + i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    }
    return Tensor::from({n, d}, std::move(values));
}

}  // namespace pheye
