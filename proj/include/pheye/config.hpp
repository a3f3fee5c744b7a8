#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pheye/decoder.hpp"

namespace pheye {

// Flat `key = value` file, `#` starts a comment. Keys:
//   seed
//   decoder.{d_model, layers, heads, vocab_size, interval, max_text_len}
//   vit.{base_resolution, patch_size, channels, d_model, layers, heads, target_resolution}
//   lora.{rank, alpha, dropout}
//   init.cross_output_std
// Missing keys keep their defaults; unknown or repeated keys are errors.
struct ModelConfig {
    DecoderGeometry decoder;
    VitGeometry vision;
    ModelOptions options;
    std::uint64_t seed = 0;

    void validate() const;
};

ModelConfig parse_model_config(std::string_view text);
ModelConfig read_model_config(const std::string& path);
std::string model_config_text(const ModelConfig& config);

Model build_model(const ModelConfig& config);

// Weights file: "PHEYEW01", u32 version, u32 count, then per array
// u32 name length, name, u32 rank, u64 dims[rank], f64 values. Little endian.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

inline constexpr std::uint32_t kWeightsVersion = 1;

std::string serialize_weights(const std::vector<NamedParameter>& params);
std::vector<NamedArray> deserialize_weights(std::string_view bytes);
void save_weights(const std::string& path, const Model& model);
std::vector<NamedArray> load_weights(const std::string& path);
// Copies arrays into the model by name. Every model parameter must be present
// with a matching shape.
void apply_weights(Model& model, const std::vector<NamedArray>& arrays);

}  // namespace pheye
