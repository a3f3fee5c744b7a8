#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pheye/layers.hpp"
#include "pheye/tensor.hpp"

namespace pheye {

// Geometry of the shared ViT and of the multi-patch split.
//
// A target resolution k * base yields one global sub-image plus k*k local
// tiles (P = k*k + 1). k == 1 is the single-image mode: P = 1, no tiles.
struct VitGeometry {
    std::size_t base_resolution = 28;
    std::size_t patch_size = 14;
    std::size_t channels = 3;
    std::size_t d_model = 16;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t target_resolution = 56;

    void validate() const;

    std::size_t grid() const { return target_resolution / base_resolution; }
    std::size_t patches_per_side() const { return base_resolution / patch_size; }
    // N' : patches of one sub-image plus [CLS].
    std::size_t tokens_per_image() const { return patches_per_side() * patches_per_side() + 1; }
    // P
    std::size_t sub_image_count() const { return grid() == 1 ? 1 : grid() * grid() + 1; }
    std::size_t local_count() const { return sub_image_count() - 1; }
    // P * N'
    std::size_t total_tokens() const { return sub_image_count() * tokens_per_image(); }
    // N : tokens of a single ViT run directly at target resolution.
    std::size_t full_resolution_tokens() const {
        const std::size_t side = target_resolution / patch_size;
        return side * side + 1;
    }
    // Same encoder run directly at the target resolution (no split).
    VitGeometry at_full_resolution() const;
};

// Planar pixel array, pixels[c][y][x].
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    static Image filled(std::size_t channels, std::size_t height, std::size_t width, double value = 0.0);
    double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
    bool operator==(const Image&) const = default;
};

// Bilinear with half-pixel centres and edge clamping. Same-size resizes are
// exact copies.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t height, std::size_t width);

struct SplitImage {
    Image global;
    std::vector<Image> locals;  // row-major over the tile grid
};

SplitImage split_image(const Image& image, const VitGeometry& geom);

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------
struct LoraConfig {
    std::size_t rank = 8;
    double alpha = 16.0;
    double dropout = 0.05;

    void validate() const;
    double scaling() const { return alpha / static_cast<double>(rank); }
};

struct LoraLayer {
    Tensor down;  // A: [in, rank], seeded normal
    Tensor up;    // B: [rank, out], zeros

    static LoraLayer create(std::size_t in, std::size_t out, std::size_t rank, Rng& rng);
    NamedTensors named(const std::string& prefix) const;
};

// frozen(x) + (alpha/rank) * (dropout(x) A) B. Dropout only when ctx.train.
// The frozen matmul is tallied under `category`, the adapter branch under
// `other`.
Tensor lora_apply(const Tensor& x, const Linear& frozen, const LoraLayer* adapter, const LoraConfig& cfg,
                  MulCategory category, ForwardContext& ctx);

// ---------------------------------------------------------------------------
// Frozen ViT
// ---------------------------------------------------------------------------
enum class VitLinear : std::size_t { q = 0, k, v, o, fc1, fc2 };
inline constexpr std::size_t kVitLinearsPerLayer = 6;

struct VitLayer {
    LayerNormParams ln_attn;
    LayerNormParams ln_ff;
    std::array<Linear, kVitLinearsPerLayer> linears;

    const Linear& linear(VitLinear which) const { return linears[static_cast<std::size_t>(which)]; }
};

struct Vit {
    VitGeometry geom;
    Linear patch_embed;  // [C * patch^2, D]
    Tensor cls;          // [1, D]
    Tensor positions;    // [N', D]
    std::vector<VitLayer> layers;

    static Vit random(const VitGeometry& geom, Rng& rng);
    NamedTensors named_parameters() const;
};

// One adapter per linear layer of the ViT, patch embedding included.
struct LoraAdapterSet {
    LoraConfig config;
    LoraLayer patch_embed;
    std::vector<std::array<LoraLayer, kVitLinearsPerLayer>> layers;

    static LoraAdapterSet create(const Vit& vit, const LoraConfig& config, Rng& rng);
    // Throws ConfigError when the adapter shapes do not fit `vit`.
    void check_compatible(const Vit& vit) const;
    NamedTensors named_parameters() const;
};

// [n_patches, C * patch^2]; patches row-major, features ordered (c, dy, dx).
Tensor extract_patches(const Image& image, std::size_t patch_size);

// Pre-norm ViT over one base-resolution image. Returns [N', D_ViT].
Tensor vit_forward(const Image& image, const Vit& vit, const LoraAdapterSet* adapter, ForwardContext& ctx);

// ---------------------------------------------------------------------------
// Multi-patch encoding
// ---------------------------------------------------------------------------
struct TokenOrigin {
    int local_index = -1;  // -1 for the global image

    bool is_global() const { return local_index < 0; }
    bool operator==(const TokenOrigin&) const = default;
};

struct VisionTokens {
    Tensor tokens;  // [P * N', D_ViT], global block first
    std::vector<TokenOrigin> origin;
    std::size_t global_count = 0;
    std::size_t local_count = 0;

    std::size_t size() const { return origin.size(); }
};

struct EncoderNorms {
    LayerNormParams global;
    LayerNormParams local;
};

VisionTokens encode(const Image& image, const Vit& vit, const LoraAdapterSet& global_adapter,
                    const LoraAdapterSet& local_adapter, const EncoderNorms& norms, const Tensor& pos_embed,
                    ForwardContext& ctx);

// The trainable half of the vision path: two adapter sets, two LayerNorms and
// the per-position embeddings of the concatenated sequence.
struct VisionEncoder {
    LoraAdapterSet global_adapter;
    LoraAdapterSet local_adapter;
    EncoderNorms norms;
    Tensor pos_embed;  // [P * N', D_ViT], zero-initialised

    static VisionEncoder create(const Vit& vit, const LoraConfig& config, Rng& rng);
    VisionTokens encode(const Image& image, const Vit& vit, ForwardContext& ctx) const;
    NamedTensors named_parameters() const;
};

}  // namespace pheye
