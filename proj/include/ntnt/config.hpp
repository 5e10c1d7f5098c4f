#pragma once

#include <cstdint>
#include <string>

#include "ntnt/errors.hpp"

namespace ntnt {

enum class Variant { vit, tnt, nested_tnt };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Complete architectural description of one model.
struct ModelConfig {
    Variant variant = Variant::vit;
    std::size_t image_size = 224;
    std::size_t patch_size = 16;
    std::size_t word_size = 0;  // tnt/nested only
    std::size_t outer_dim = 0;  // D
    std::size_t inner_dim = 0;  // D_w, tnt/nested only
    std::size_t outer_heads = 0;
    std::size_t inner_heads = 0; // tnt/nested only
    std::size_t depth = 0;       // L
    std::size_t mlp_ratio = 4;
    std::size_t num_classes = 0;
    std::size_t fusion_hidden = 0; // r, nested only; 0 means 2*outer_heads

    bool has_inner() const { return variant != Variant::vit; }
    bool has_fusion() const { return variant == Variant::nested_tnt; }

    /// n = (image_size / patch_size)^2
    std::size_t num_patches() const {
        std::size_t g = image_size / patch_size;
        return g * g;
    }
    /// m = (patch_size / word_size)^2
    std::size_t num_words() const {
        std::size_t g = patch_size / word_size;
        return g * g;
    }
    std::size_t fusion_width() const { return fusion_hidden ? fusion_hidden : 2 * outer_heads; }

    /// Throws ConfigError unless all structural invariants hold.
    void validate() const;
};

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg); // canonical (sorted keys, compact)
ModelConfig load_model_config(const std::string& path);

} // namespace ntnt
