#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pheye/layers.hpp"
#include "pheye/tensor.hpp"
#include "pheye/vision.hpp"

namespace pheye {

struct DecoderGeometry {
    std::size_t d_model = 16;
    std::size_t layers = 4;
    std::size_t heads = 2;
    std::size_t vocab_size = 16;
    std::size_t interval = 2;  // I: a cross-attention block before layers 0, I, 2I, ...
    std::size_t max_text_len = 32;

    void validate() const;
    std::size_t cross_block_count() const { return (layers + interval - 1) / interval; }
    bool has_block_before(std::size_t layer) const { return layer % interval == 0; }
};

struct DecoderLayer {
    LayerNormParams ln_attn;
    LayerNormParams ln_ff;
    Linear q, k, v, o, fc1, fc2;
};

// Seeded stand-in for a pre-trained causal LM. Never trained.
struct FrozenDecoder {
    DecoderGeometry geom;
    Tensor token_embed;  // [V, D]
    std::vector<DecoderLayer> layers;
    LayerNormParams ln_final;
    Tensor unembed;  // [D, V]

    static FrozenDecoder random(const DecoderGeometry& geom, Rng& rng);
    NamedTensors named_parameters() const;
};

// Activation of the cross block's feed-forward. Kept in one place so it can
// be swapped to match a different frozen decoder.
inline Tensor cross_block_activation(const Tensor& x) { return gelu(x); }

// Dense cross-attention: text queries over vision keys/values followed by a
// feed-forward, both residual. K and V read the D_ViT vision features
// directly. The output maps (o, fc2) start near zero.
struct DenseCrossAttentionBlock {
    LayerNormParams ln_attn;
    LayerNormParams ln_ff;
    Linear q;    // [D, D]
    Linear k;    // [D_ViT, D]
    Linear v;    // [D_ViT, D]
    Linear o;    // [D, D]
    Linear fc1;  // [D, 4D]
    Linear fc2;  // [4D, D]

    // output_std == 0 gives exact zeros for o and fc2.
    static DenseCrossAttentionBlock create(std::size_t d_model, std::size_t d_vision, double output_std, Rng& rng);
    NamedTensors named_parameters() const;
};

// Per block, per query row, per head.
struct CrossAttentionTrace {
    std::vector<AttentionProbs> blocks;  // [block][head][query][key]
};

Tensor cross_attend(const DenseCrossAttentionBlock& block, const Tensor& hidden, const Tensor& vision,
                    std::size_t heads, ForwardContext& ctx, AttentionProbs* record = nullptr);

struct ModelOptions {
    LoraConfig lora{};
    double cross_output_std = 1e-6;
};

struct NamedParameter {
    std::string name;
    Tensor tensor;
    bool trainable = false;
};

// Frozen ViT + frozen decoder joined by trainable cross-attention, with the
// trainable vision adapters. Parameters are shared handles, so the model is
// move-only to avoid accidental aliasing.
struct Model {
    VitGeometry vision_geom;
    DecoderGeometry decoder_geom;
    ModelOptions options;
    Vit vit;
    VisionEncoder encoder;
    FrozenDecoder decoder;
    std::vector<DenseCrossAttentionBlock> blocks;
    std::vector<std::size_t> block_positions;  // decoder layer index each block precedes
    mutable Rng dropout_rng{0};

    Model() = default;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    std::vector<NamedParameter> named_parameters() const;
    std::vector<NamedParameter> trainable_parameters() const;
    std::vector<NamedParameter> frozen_parameters() const;
    void zero_grad();
};

Model build_model(const DecoderGeometry& dg, const VitGeometry& vg, std::uint64_t seed,
                  const ModelOptions& options = {});

// Logits [N_T, V] for `text_ids` conditioned on `vision`.
Tensor forward(const Model& model, std::span<const int> text_ids, const VisionTokens& vision, ForwardContext& ctx,
               CrossAttentionTrace* trace = nullptr);
// Same decoder with the cross-attention blocks skipped.
Tensor forward_frozen(const FrozenDecoder& decoder, std::span<const int> text_ids, ForwardContext& ctx);

// Maps D_ViT vision tokens to the decoder width for the concatenation
// baseline.
struct LlavaProjector {
    Linear proj;  // [D_ViT, D]

    static LlavaProjector create(std::size_t d_vision, std::size_t d_model, Rng& rng);
    Tensor operator()(const Tensor& vision, MulLedger& ledger) const;
};

// Concatenation baseline: [vision; text] through the plain decoder. Returns
// logits for the text positions only. `vision_projected` may be undefined
// (no vision tokens).
Tensor llava_forward(const Model& model, std::span<const int> text_ids, const Tensor& vision_projected,
                     ForwardContext& ctx);

struct GenerationOutput {
    std::vector<int> token_ids;  // newly generated tokens
    Tensor logits;               // [steps, V]
    // [block][step][head] -> distribution over the vision tokens
    std::vector<std::vector<std::vector<std::vector<double>>>> cross_attention;
};

// Greedy decoding without a KV cache; every step reruns the full prefix.
GenerationOutput generate(const Model& model, std::span<const int> prompt_ids, const VisionTokens& vision,
                          std::size_t max_new, ForwardContext& ctx);

}  // namespace pheye
