#include "pheye/vision.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace pheye {

namespace {

constexpr std::array<const char*, kVitLinearsPerLayer> kLinearNames = {"q", "k", "v", "o", "fc1", "fc2"};

std::string layer_prefix(std::size_t i) { return "layers." + std::to_string(i) + "."; }

}  // namespace

// --- geometry ---------------------------------------------------------------

void VitGeometry::validate() const {
    if (base_resolution == 0 || patch_size == 0 || channels == 0 || d_model == 0 || layers == 0 || heads == 0 ||
        target_resolution == 0) {
        throw ConfigError("vision geometry values must all be positive");
    }
    if (base_resolution % patch_size != 0) {
        throw ConfigError("base resolution " + std::to_string(base_resolution) + " is not divisible by patch size " +
                          std::to_string(patch_size));
    }
    if (target_resolution % base_resolution != 0) {
        throw ConfigError("target resolution " + std::to_string(target_resolution) +
                          " is not a multiple of base resolution " + std::to_string(base_resolution));
    }
    if (d_model % heads != 0) {
        throw ConfigError("ViT width " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
}

VitGeometry VitGeometry::at_full_resolution() const {
    VitGeometry g = *this;
    g.base_resolution = target_resolution;
    return g;
}

// --- images -----------------------------------------------------------------

Image Image::filled(std::size_t channels, std::size_t height, std::size_t width, double value) {
    return {channels, height, width, std::vector<double>(channels * height * width, value)};
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
    if (image.height == 0 || image.width == 0 || height == 0 || width == 0) {
        throw InputError("resize: image dimensions must be positive");
    }
    if (image.height == height && image.width == width) return image;
    Image out = Image::filled(image.channels, height, width);
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    auto source = [](std::size_t dst, double s, std::size_t limit) {
        const double pos = std::clamp((static_cast<double>(dst) + 0.5) * s - 0.5, 0.0, static_cast<double>(limit - 1));
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, limit - 1);
        return std::tuple{lo, hi, pos - static_cast<double>(lo)};
    };
    for (std::size_t y = 0; y < height; ++y) {
        const auto [y0, y1, wy] = source(y, sy, image.height);
        for (std::size_t x = 0; x < width; ++x) {
            const auto [x0, x1, wx] = source(x, sx, image.width);
            for (std::size_t c = 0; c < image.channels; ++c) {
                const double top = image.at(c, y0, x0) * (1.0 - wx) + image.at(c, y0, x1) * wx;
                const double bottom = image.at(c, y1, x0) * (1.0 - wx) + image.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    return out;
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
    if (top + height > image.height || left + width > image.width) throw InputError("crop outside image bounds");
    Image out = Image::filled(image.channels, height, width);
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, top + y, left + x);
    return out;
}

SplitImage split_image(const Image& image, const VitGeometry& geom) {
    geom.validate();
    if (image.height == 0 || image.width == 0 || image.channels == 0) {
        throw InputError("image dimensions must be positive");
    }
    if (image.pixels.size() != image.channels * image.height * image.width) {
        throw InputError("image pixel buffer does not match its dimensions");
    }
    if (image.channels != geom.channels) {
        throw InputError("image has " + std::to_string(image.channels) + " channels, encoder expects " +
                         std::to_string(geom.channels));
    }
    if (image.height < geom.base_resolution || image.width < geom.base_resolution) {
        throw InputError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is smaller than the base resolution " + std::to_string(geom.base_resolution));
    }
    SplitImage split;
    split.global = resize_bilinear(image, geom.base_resolution, geom.base_resolution);
    if (geom.grid() == 1) return split;
    const Image high = resize_bilinear(image, geom.target_resolution, geom.target_resolution);
    const std::size_t base = geom.base_resolution;
    for (std::size_t r = 0; r < geom.grid(); ++r)
        for (std::size_t c = 0; c < geom.grid(); ++c) split.locals.push_back(crop(high, r * base, c * base, base, base));
    return split;
}

// --- LoRA -------------------------------------------------------------------

void LoraConfig::validate() const {
    if (rank == 0) throw ConfigError("LoRA rank must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("LoRA dropout must lie in [0, 1)");
}

LoraLayer LoraLayer::create(std::size_t in, std::size_t out, std::size_t rank, Rng& rng) {
    if (rank == 0) throw ConfigError("LoRA rank must be positive");
    return {Tensor::randn({in, rank}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true),
            Tensor::zeros({rank, out}, true)};
}

NamedTensors LoraLayer::named(const std::string& prefix) const {
    return {{prefix + ".lora_down", down}, {prefix + ".lora_up", up}};
}

Tensor lora_apply(const Tensor& x, const Linear& frozen, const LoraLayer* adapter, const LoraConfig& cfg,
                  MulCategory category, ForwardContext& ctx) {
    Tensor out = frozen(x, category, ctx.ledger);
    if (!adapter) return out;
    cfg.validate();
    if (adapter->down.dim(1) != cfg.rank || adapter->up.dim(0) != cfg.rank) {
        throw ConfigError("LoRA adapter rank does not match its configuration (" + std::to_string(cfg.rank) + ")");
    }
    if (adapter->down.dim(0) != frozen.in_features() || adapter->up.dim(1) != frozen.out_features()) {
        throw ConfigError("LoRA adapter shapes " + shape_to_string(adapter->down.shape()) + " / " +
                          shape_to_string(adapter->up.shape()) + " do not fit linear " +
                          shape_to_string(frozen.weight.shape()));
    }
    Tensor branch = x;
    if (ctx.train && cfg.dropout > 0.0) {
        if (!ctx.dropout_rng) throw ContractError("training-mode forward needs a dropout generator");
        const double keep = 1.0 - cfg.dropout;
        std::vector<double> mask(x.numel());
        for (auto& m : mask) m = ctx.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        branch = mul(x, Tensor::from(x.shape(), std::move(mask)));
    }
    Tensor delta = matmul(matmul(branch, adapter->down, MulCategory::other, ctx.ledger), adapter->up,
                          MulCategory::other, ctx.ledger);
    return add(out, scale(delta, cfg.scaling()));
}

// --- ViT --------------------------------------------------------------------

Vit Vit::random(const VitGeometry& geom, Rng& rng) {
    geom.validate();
    const std::size_t d = geom.d_model;
    const std::size_t patch_in = geom.channels * geom.patch_size * geom.patch_size;
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    Vit vit;
    vit.geom = geom;
    vit.patch_embed = Linear::random(patch_in, d, rng, 1.0 / std::sqrt(static_cast<double>(patch_in)), false);
    vit.cls = Tensor::randn({1, d}, rng, emb_std);
    vit.positions = Tensor::randn({geom.tokens_per_image(), d}, rng, emb_std);
    const std::array<std::pair<std::size_t, std::size_t>, kVitLinearsPerLayer> dims = {
        {{d, d}, {d, d}, {d, d}, {d, d}, {d, 4 * d}, {4 * d, d}}};
    for (std::size_t l = 0; l < geom.layers; ++l) {
        VitLayer layer{LayerNormParams::identity(d, false), LayerNormParams::identity(d, false), {}};
        for (std::size_t i = 0; i < kVitLinearsPerLayer; ++i) {
            const auto [in, out] = dims[i];
            layer.linears[i] = Linear::random(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)), false);
        }
        vit.layers.push_back(std::move(layer));
    }
    return vit;
}

NamedTensors Vit::named_parameters() const {
    NamedTensors out = patch_embed.named("patch_embed");
    out.push_back({"cls", cls});
    out.push_back({"positions", positions});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto prefix = layer_prefix(l);
        append_named(out, prefix, layers[l].ln_attn.named("ln_attn"));
        append_named(out, prefix, layers[l].ln_ff.named("ln_ff"));
        for (std::size_t i = 0; i < kVitLinearsPerLayer; ++i) {
            append_named(out, prefix, layers[l].linears[i].named(kLinearNames[i]));
        }
    }
    return out;
}

LoraAdapterSet LoraAdapterSet::create(const Vit& vit, const LoraConfig& config, Rng& rng) {
    config.validate();
    LoraAdapterSet set;
    set.config = config;
    set.patch_embed = LoraLayer::create(vit.patch_embed.in_features(), vit.patch_embed.out_features(), config.rank, rng);
    for (const auto& layer : vit.layers) {
        std::array<LoraLayer, kVitLinearsPerLayer> adapters;
        for (std::size_t i = 0; i < kVitLinearsPerLayer; ++i) {
            adapters[i] = LoraLayer::create(layer.linears[i].in_features(), layer.linears[i].out_features(),
                                            config.rank, rng);
        }
        set.layers.push_back(std::move(adapters));
    }
    return set;
}

void LoraAdapterSet::check_compatible(const Vit& vit) const {
    config.validate();
    auto fits = [this](const LoraLayer& a, const Linear& l) {
        return a.down.shape() == Shape{l.in_features(), config.rank} &&
               a.up.shape() == Shape{config.rank, l.out_features()};
    };
    if (layers.size() != vit.layers.size()) {
        throw ConfigError("adapter set has " + std::to_string(layers.size()) + " layers, ViT has " +
                          std::to_string(vit.layers.size()));
    }
    if (!fits(patch_embed, vit.patch_embed)) throw ConfigError("patch-embedding adapter does not fit the ViT");
    for (std::size_t l = 0; l < layers.size(); ++l)
        for (std::size_t i = 0; i < kVitLinearsPerLayer; ++i)
            if (!fits(layers[l][i], vit.layers[l].linears[i])) {
                throw ConfigError("adapter for layer " + std::to_string(l) + " " + kLinearNames[i] +
                                  " does not fit the ViT");
            }
}

NamedTensors LoraAdapterSet::named_parameters() const {
    NamedTensors out = patch_embed.named("patch_embed");
    for (std::size_t l = 0; l < layers.size(); ++l)
        for (std::size_t i = 0; i < kVitLinearsPerLayer; ++i)
            append_named(out, layer_prefix(l), layers[l][i].named(kLinearNames[i]));
    return out;
}

Tensor extract_patches(const Image& image, std::size_t patch_size) {
    const std::size_t rows = image.height / patch_size, cols = image.width / patch_size;
    const std::size_t features = image.channels * patch_size * patch_size;
    std::vector<double> values(rows * cols * features);
    std::size_t idx = 0;
    for (std::size_t pr = 0; pr < rows; ++pr)
        for (std::size_t pc = 0; pc < cols; ++pc)
            for (std::size_t c = 0; c < image.channels; ++c)
                for (std::size_t dy = 0; dy < patch_size; ++dy)
                    for (std::size_t dx = 0; dx < patch_size; ++dx)
                        values[idx++] = image.at(c, pr * patch_size + dy, pc * patch_size + dx);
    return Tensor::from({rows * cols, features}, std::move(values));
}

Tensor vit_forward(const Image& image, const Vit& vit, const LoraAdapterSet* adapter, ForwardContext& ctx) {
    const auto& g = vit.geom;
    if (image.height != g.base_resolution || image.width != g.base_resolution || image.channels != g.channels) {
        throw InputError("ViT expects " + std::to_string(g.channels) + "x" + std::to_string(g.base_resolution) + "x" +
                         std::to_string(g.base_resolution) + " input, got " + std::to_string(image.channels) + "x" +
                         std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    const LoraConfig cfg = adapter ? adapter->config : LoraConfig{};
    if (adapter) adapter->check_compatible(vit);
    auto lora_of = [adapter](std::size_t layer, VitLinear which) -> const LoraLayer* {
        return adapter ? &adapter->layers[layer][static_cast<std::size_t>(which)] : nullptr;
    };

    const Tensor patches = extract_patches(image, g.patch_size);
    const Tensor embedded = lora_apply(patches, vit.patch_embed, adapter ? &adapter->patch_embed : nullptr, cfg,
                                       MulCategory::other, ctx);
    Tensor x = add(concat_rows({vit.cls, embedded}), vit.positions);

    for (std::size_t l = 0; l < vit.layers.size(); ++l) {
        const VitLayer& layer = vit.layers[l];
        auto proj = [&](const Tensor& in, VitLinear which, MulCategory cat) {
            return lora_apply(in, layer.linear(which), lora_of(l, which), cfg, cat, ctx);
        };
        const Tensor h = layer.ln_attn(x);
        const Tensor q = proj(h, VitLinear::q, MulCategory::projection);
        const Tensor k = proj(h, VitLinear::k, MulCategory::projection);
        const Tensor v = proj(h, VitLinear::v, MulCategory::projection);
        const Tensor attended = multi_head_attention(q, k, v, g.heads, false, ctx.ledger);
        x = add(x, proj(attended, VitLinear::o, MulCategory::projection));

        const Tensor h2 = layer.ln_ff(x);
        const Tensor inner = gelu(proj(h2, VitLinear::fc1, MulCategory::feedforward));
        x = add(x, proj(inner, VitLinear::fc2, MulCategory::feedforward));
    }
    return x;
}

// --- encoder ----------------------------------------------------------------

VisionTokens encode(const Image& image, const Vit& vit, const LoraAdapterSet& global_adapter,
                    const LoraAdapterSet& local_adapter, const EncoderNorms& norms, const Tensor& pos_embed,
                    ForwardContext& ctx) {
    const auto& g = vit.geom;
    global_adapter.check_compatible(vit);
    local_adapter.check_compatible(vit);
    if (pos_embed.rank() != 2 || pos_embed.dim(0) != g.total_tokens() || pos_embed.dim(1) != g.d_model) {
        throw ConfigError("positional embedding " + shape_to_string(pos_embed.shape()) + " does not match " +
                          std::to_string(g.total_tokens()) + " tokens of width " + std::to_string(g.d_model));
    }
    const SplitImage split = split_image(image, g);

    std::vector<Tensor> blocks;
    blocks.reserve(g.sub_image_count());
    blocks.push_back(norms.global(vit_forward(split.global, vit, &global_adapter, ctx)));
    for (const auto& tile : split.locals) blocks.push_back(norms.local(vit_forward(tile, vit, &local_adapter, ctx)));

    VisionTokens out;
    out.tokens = add(blocks.size() == 1 ? blocks.front() : concat_rows(blocks), pos_embed);
    const std::size_t per_image = g.tokens_per_image();
    out.origin.assign(per_image, TokenOrigin{});
    for (std::size_t i = 0; i < split.locals.size(); ++i)
        out.origin.insert(out.origin.end(), per_image, TokenOrigin{static_cast<int>(i)});
    out.global_count = per_image;
    out.local_count = per_image * split.locals.size();
    return out;
}

VisionEncoder VisionEncoder::create(const Vit& vit, const LoraConfig& config, Rng& rng) {
    const auto& g = vit.geom;
    VisionEncoder enc;
    enc.global_adapter = LoraAdapterSet::create(vit, config, rng);
    enc.local_adapter = LoraAdapterSet::create(vit, config, rng);
    enc.norms = {LayerNormParams::identity(g.d_model, true), LayerNormParams::identity(g.d_model, true)};
    enc.pos_embed = Tensor::zeros({g.total_tokens(), g.d_model}, true);
    return enc;
}

VisionTokens VisionEncoder::encode(const Image& image, const Vit& vit, ForwardContext& ctx) const {
    return pheye::encode(image, vit, global_adapter, local_adapter, norms, pos_embed, ctx);
}

NamedTensors VisionEncoder::named_parameters() const {
    NamedTensors out;
    append_named(out, "global_adapter.", global_adapter.named_parameters());
    append_named(out, "local_adapter.", local_adapter.named_parameters());
    append_named(out, "", norms.global.named("norm_global"));
    append_named(out, "", norms.local.named("norm_local"));
    out.push_back({"pos_embed", pos_embed});
    return out;
}

}  // namespace pheye
