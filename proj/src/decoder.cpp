#include "pheye/decoder.hpp"

#include <cmath>

namespace pheye {

namespace {

Linear scaled_linear(std::size_t in, std::size_t out, double stddev, Rng& rng, bool trainable) {
    Linear l = Linear::random(in, out, rng, 1.0, trainable);
    for (auto& w : l.weight.mutable_data()) w = stddev == 0.0 ? 0.0 : w * stddev;
    return l;
}

double fan_in_std(std::size_t in) { return 1.0 / std::sqrt(static_cast<double>(in)); }

Tensor decoder_layer(const DecoderLayer& layer, const Tensor& x, std::size_t heads, ForwardContext& ctx) {
    const Tensor h = layer.ln_attn(x);
    const Tensor q = layer.q(h, MulCategory::projection, ctx.ledger);
    const Tensor k = layer.k(h, MulCategory::projection, ctx.ledger);
    const Tensor v = layer.v(h, MulCategory::projection, ctx.ledger);
    const Tensor attended = multi_head_attention(q, k, v, heads, true, ctx.ledger);
    const Tensor mid = add(x, layer.o(attended, MulCategory::projection, ctx.ledger));
    const Tensor inner = gelu(layer.fc1(layer.ln_ff(mid), MulCategory::feedforward, ctx.ledger));
    return add(mid, layer.fc2(inner, MulCategory::feedforward, ctx.ledger));
}

void check_text(const DecoderGeometry& g, std::span<const int> text_ids) {
    if (text_ids.empty()) throw InputError("text sequence is empty");
    if (text_ids.size() > g.max_text_len) {
        throw InputError("text length " + std::to_string(text_ids.size()) + " exceeds max_text_len " +
                         std::to_string(g.max_text_len));
    }
    for (int id : text_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= g.vocab_size) {
            throw InputError("unknown token id " + std::to_string(id) + " (vocabulary " +
                             std::to_string(g.vocab_size) + ")");
        }
    }
}

Tensor embed_text(const FrozenDecoder& decoder, std::span<const int> text_ids, std::size_t position_offset) {
    const std::size_t d = decoder.geom.d_model;
    const Tensor tokens = embedding(decoder.token_embed, text_ids);
    const Tensor positions = sinusoidal_positions(position_offset + text_ids.size(), d);
    return add(tokens, position_offset == 0 ? positions : slice_rows(positions, position_offset, text_ids.size()));
}

Tensor logits_from(const FrozenDecoder& decoder, const Tensor& hidden, ForwardContext& ctx) {
    return matmul(decoder.ln_final(hidden), decoder.unembed, MulCategory::other, ctx.ledger);
}

}  // namespace

void DecoderGeometry::validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || vocab_size == 0 || max_text_len == 0) {
        throw ConfigError("decoder geometry values must all be positive");
    }
    if (interval == 0) throw ConfigError("cross-attention interval must be at least 1");
    if (interval > layers) {
        throw ConfigError("cross-attention interval " + std::to_string(interval) + " exceeds the " +
                          std::to_string(layers) + " decoder layers");
    }
    if (d_model % heads != 0) {
        throw ConfigError("decoder width " + std::to_string(d_model) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
}

FrozenDecoder FrozenDecoder::random(const DecoderGeometry& geom, Rng& rng) {
    geom.validate();
    const std::size_t d = geom.d_model;
    FrozenDecoder dec;
    dec.geom = geom;
    dec.token_embed = Tensor::randn({geom.vocab_size, d}, rng, 1.0);
    for (std::size_t l = 0; l < geom.layers; ++l) {
        dec.layers.push_back(DecoderLayer{
            LayerNormParams::identity(d, false), LayerNormParams::identity(d, false),
            Linear::random(d, d, rng, fan_in_std(d), false), Linear::random(d, d, rng, fan_in_std(d), false),
            Linear::random(d, d, rng, fan_in_std(d), false), Linear::random(d, d, rng, fan_in_std(d), false),
            Linear::random(d, 4 * d, rng, fan_in_std(d), false),
            Linear::random(4 * d, d, rng, fan_in_std(4 * d), false)});
    }
    dec.ln_final = LayerNormParams::identity(d, false);
    dec.unembed = Tensor::randn({d, geom.vocab_size}, rng, fan_in_std(d));
    return dec;
}

NamedTensors FrozenDecoder::named_parameters() const {
    NamedTensors out{{"token_embed", token_embed}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto prefix = "layers." + std::to_string(l) + ".";
        const auto& layer = layers[l];
        append_named(out, prefix, layer.ln_attn.named("ln_attn"));
        append_named(out, prefix, layer.ln_ff.named("ln_ff"));
        append_named(out, prefix, layer.q.named("q"));
        append_named(out, prefix, layer.k.named("k"));
        append_named(out, prefix, layer.v.named("v"));
        append_named(out, prefix, layer.o.named("o"));
        append_named(out, prefix, layer.fc1.named("fc1"));
        append_named(out, prefix, layer.fc2.named("fc2"));
    }
    append_named(out, "", ln_final.named("ln_final"));
    out.push_back({"unembed", unembed});
    return out;
}

DenseCrossAttentionBlock DenseCrossAttentionBlock::create(std::size_t d_model, std::size_t d_vision,
                                                          double output_std, Rng& rng) {
    if (output_std < 0.0) throw ConfigError("cross-attention output std must be non-negative");
    const std::size_t d = d_model;
    DenseCrossAttentionBlock b;
    b.ln_attn = LayerNormParams::identity(d, true);
    b.ln_ff = LayerNormParams::identity(d, true);
    b.q = scaled_linear(d, d, fan_in_std(d), rng, true);
    b.k = scaled_linear(d_vision, d, fan_in_std(d_vision), rng, true);
    b.v = scaled_linear(d_vision, d, fan_in_std(d_vision), rng, true);
    b.o = scaled_linear(d, d, output_std, rng, true);
    b.fc1 = scaled_linear(d, 4 * d, fan_in_std(d), rng, true);
    b.fc2 = scaled_linear(4 * d, d, output_std, rng, true);
    return b;
}

NamedTensors DenseCrossAttentionBlock::named_parameters() const {
    NamedTensors out;
    append_named(out, "", ln_attn.named("ln_attn"));
    append_named(out, "", ln_ff.named("ln_ff"));
    append_named(out, "", q.named("q"));
    append_named(out, "", k.named("k"));
    append_named(out, "", v.named("v"));
    append_named(out, "", o.named("o"));
    append_named(out, "", fc1.named("fc1"));
    append_named(out, "", fc2.named("fc2"));
    return out;
}

Tensor cross_attend(const DenseCrossAttentionBlock& block, const Tensor& hidden, const Tensor& vision,
                    std::size_t heads, ForwardContext& ctx, AttentionProbs* record) {
    if (!vision.defined()) throw InputError("cross-attention needs at least one vision token");
    if (vision.rank() != 2 || vision.dim(1) != block.k.in_features()) {
        throw DimensionError("vision features " + shape_to_string(vision.shape()) + " do not match block width " +
                             std::to_string(block.k.in_features()));
    }
    if (hidden.rank() != 2 || hidden.dim(1) != block.q.in_features()) {
        throw DimensionError("hidden states " + shape_to_string(hidden.shape()) + " do not match block width " +
                             std::to_string(block.q.in_features()));
    }
    const Tensor h = block.ln_attn(hidden);
    const Tensor q = block.q(h, MulCategory::projection, ctx.ledger);
    const Tensor k = block.k(vision, MulCategory::projection, ctx.ledger);
    const Tensor v = block.v(vision, MulCategory::projection, ctx.ledger);
    const Tensor attended = multi_head_attention(q, k, v, heads, false, ctx.ledger, record);
    const Tensor mid = add(hidden, block.o(attended, MulCategory::projection, ctx.ledger));
    const Tensor inner = cross_block_activation(block.fc1(block.ln_ff(mid), MulCategory::feedforward, ctx.ledger));
    return add(mid, block.fc2(inner, MulCategory::feedforward, ctx.ledger));
}

// --- model ------------------------------------------------------------------

std::vector<NamedParameter> Model::named_parameters() const {
    std::vector<NamedParameter> out;
    auto push = [&out](const std::string& prefix, const NamedTensors& items, bool trainable) {
        for (const auto& item : items) out.push_back({prefix + item.name, item.tensor, trainable});
    };
    push("vit.", vit.named_parameters(), false);
    push("decoder.", decoder.named_parameters(), false);
    push("encoder.", encoder.named_parameters(), true);
    for (std::size_t i = 0; i < blocks.size(); ++i) push("cross." + std::to_string(i) + ".", blocks[i].named_parameters(), true);
    return out;
}

std::vector<NamedParameter> Model::trainable_parameters() const {
    std::vector<NamedParameter> out;
    for (auto& p : named_parameters())
        if (p.trainable) out.push_back(std::move(p));
    return out;
}

std::vector<NamedParameter> Model::frozen_parameters() const {
    std::vector<NamedParameter> out;
    for (auto& p : named_parameters())
        if (!p.trainable) out.push_back(std::move(p));
    return out;
}

void Model::zero_grad() {
    for (auto& p : trainable_parameters()) p.tensor.zero_grad();
}

Model build_model(const DecoderGeometry& dg, const VitGeometry& vg, std::uint64_t seed, const ModelOptions& options) {
    dg.validate();
    vg.validate();
    options.lora.validate();
    Rng rng(seed);
    Model m;
    m.vision_geom = vg;
    m.decoder_geom = dg;
    m.options = options;
    // Frozen weights are drawn first so they do not depend on trainable options.
    m.vit = Vit::random(vg, rng);
    m.decoder = FrozenDecoder::random(dg, rng);
    m.encoder = VisionEncoder::create(m.vit, options.lora, rng);
    for (std::size_t layer = 0; layer < dg.layers; ++layer) {
        if (!dg.has_block_before(layer)) continue;
        m.blocks.push_back(DenseCrossAttentionBlock::create(dg.d_model, vg.d_model, options.cross_output_std, rng));
        m.block_positions.push_back(layer);
    }
    m.dropout_rng = Rng(seed ^ 0x9E3779B97F4A7C15ULL);
    return m;
}

Tensor forward(const Model& model, std::span<const int> text_ids, const VisionTokens& vision, ForwardContext& ctx,
               CrossAttentionTrace* trace) {
    const auto& g = model.decoder_geom;
    check_text(g, text_ids);
    if (!vision.tokens.defined() || vision.size() == 0) throw InputError("forward needs vision tokens");
    Tensor x = embed_text(model.decoder, text_ids, 0);
    if (trace) trace->blocks.assign(model.blocks.size(), {});
    std::size_t b = 0;
    for (std::size_t l = 0; l < model.decoder.layers.size(); ++l) {
        if (b < model.block_positions.size() && model.block_positions[b] == l) {
            x = cross_attend(model.blocks[b], x, vision.tokens, g.heads, ctx, trace ? &trace->blocks[b] : nullptr);
            ++b;
        }
        x = decoder_layer(model.decoder.layers[l], x, g.heads, ctx);
    }
    return logits_from(model.decoder, x, ctx);
}

Tensor forward_frozen(const FrozenDecoder& decoder, std::span<const int> text_ids, ForwardContext& ctx) {
    check_text(decoder.geom, text_ids);
    Tensor x = embed_text(decoder, text_ids, 0);
    for (const auto& layer : decoder.layers) x = decoder_layer(layer, x, decoder.geom.heads, ctx);
    return logits_from(decoder, x, ctx);
}

LlavaProjector LlavaProjector::create(std::size_t d_vision, std::size_t d_model, Rng& rng) {
    return {Linear::random(d_vision, d_model, rng, fan_in_std(d_vision), true)};
}

Tensor LlavaProjector::operator()(const Tensor& vision, MulLedger& ledger) const {
    return proj(vision, MulCategory::other, ledger);
}

Tensor llava_forward(const Model& model, std::span<const int> text_ids, const Tensor& vision_projected,
                     ForwardContext& ctx) {
    const auto& g = model.decoder_geom;
    check_text(g, text_ids);
    std::size_t n_vision = 0;
    Tensor x;
    if (vision_projected.defined()) {
        if (vision_projected.rank() != 2 || vision_projected.dim(1) != g.d_model) {
            throw DimensionError("projected vision tokens " + shape_to_string(vision_projected.shape()) +
                                 " do not match decoder width " + std::to_string(g.d_model));
        }
        n_vision = vision_projected.dim(0);
        const Tensor vision_pos = add(vision_projected, sinusoidal_positions(n_vision, g.d_model));
        x = concat_rows({vision_pos, embed_text(model.decoder, text_ids, n_vision)});
    } else {
        x = embed_text(model.decoder, text_ids, 0);
    }
    for (const auto& layer : model.decoder.layers) x = decoder_layer(layer, x, g.heads, ctx);
    if (n_vision > 0) x = slice_rows(x, n_vision, text_ids.size());
    return logits_from(model.decoder, x, ctx);
}

GenerationOutput generate(const Model& model, std::span<const int> prompt_ids, const VisionTokens& vision,
                          std::size_t max_new, ForwardContext& ctx) {
    if (max_new == 0) throw InputError("generate: max_new must be at least 1");
    const std::size_t vocab = model.decoder_geom.vocab_size;
    std::vector<int> sequence(prompt_ids.begin(), prompt_ids.end());
    GenerationOutput out;
    out.cross_attention.assign(model.blocks.size(), {});
    std::vector<double> logit_rows;
    for (std::size_t step = 0; step < max_new; ++step) {
        CrossAttentionTrace trace;
        const Tensor logits = forward(model, sequence, vision, ctx, &trace);
        const std::size_t last = logits.dim(0) - 1;
        auto row = logits.data().subspan(last * vocab, vocab);
        std::size_t best = 0;
        for (std::size_t j = 1; j < vocab; ++j)
            if (row[j] > row[best]) best = j;
        logit_rows.insert(logit_rows.end(), row.begin(), row.end());
        for (std::size_t b = 0; b < trace.blocks.size(); ++b) {
            std::vector<std::vector<double>> heads;
            for (const auto& head : trace.blocks[b]) heads.push_back(head[last]);
            out.cross_attention[b].push_back(std::move(heads));
        }
        out.token_ids.push_back(static_cast<int>(best));
        sequence.push_back(static_cast<int>(best));
    }
    out.logits = Tensor::from({max_new, vocab}, std::move(logit_rows));
    return out;
}

}  // namespace pheye
