#include "ntnt/cli.hpp"

#include <map>

#include "ntnt/errors.hpp"

namespace ntnt::cli {

namespace {

// Bundled fixtures; configs/ in the repository carries the same documents as
// files (kept in sync by a unit test).
const std::map<std::string, std::string> kModelPresets = {
    {"vit_s", R"json({
  "variant": "vit",
  "image_size": 224,
  "patch_size": 16,
  "outer_dim": 384,
  "outer_heads": 6,
  "depth": 12,
  "mlp_ratio": 4,
  "num_classes": 100
})json"},
    {"tnt_s", R"json({
  "variant": "tnt",
  "image_size": 224,
  "patch_size": 16,
  "word_size": 4,
  "outer_dim": 384,
  "inner_dim": 24,
  "outer_heads": 6,
  "inner_heads": 4,
  "depth": 12,
  "mlp_ratio": 4,
  "num_classes": 100
})json"},
    {"nested_tnt_s", R"json({
  "variant": "nested_tnt",
  "image_size": 224,
  "patch_size": 16,
  "word_size": 4,
  "outer_dim": 384,
  "inner_dim": 24,
  "outer_heads": 6,
  "inner_heads": 4,
  "depth": 12,
  "mlp_ratio": 4,
  "num_classes": 100
})json"},
    {"minimal", R"json({
  "variant": "nested_tnt",
  "image_size": 8,
  "patch_size": 4,
  "word_size": 2,
  "outer_dim": 8,
  "inner_dim": 4,
  "outer_heads": 2,
  "inner_heads": 2,
  "depth": 2,
  "mlp_ratio": 4,
  "num_classes": 2
})json"},
    {"toy", R"json({
  "variant": "nested_tnt",
  "image_size": 8,
  "patch_size": 4,
  "word_size": 2,
  "outer_dim": 16,
  "inner_dim": 8,
  "outer_heads": 2,
  "inner_heads": 2,
  "depth": 2,
  "mlp_ratio": 4,
  "num_classes": 2
})json"},
};

const std::map<std::string, std::string> kTrainPresets = {
    {"toy", R"json({
  "epochs": 100,
  "optimizer": "sgd",
  "momentum": 0.9,
  "batch_size": 32,
  "base_lr": 0.05,
  "schedule": "cosine",
  "weight_decay": 0.0001,
  "warmup_epochs": 3,
  "label_smooth": 0.1,
  "seed": 7,
  "deterministic": true,
  "augment": {
    "enabled": false,
    "target_size": 8
  }
})json"},
};

} // namespace

const std::string& preset_model_config(const std::string& name) {
    auto it = kModelPresets.find(name);
    if (it == kModelPresets.end()) throw ConfigError("unknown model preset '" + name + "'");
    return it->second;
}

const std::string& preset_train_config(const std::string& name) {
    auto it = kTrainPresets.find(name);
    if (it == kTrainPresets.end()) throw ConfigError("unknown train preset '" + name + "'");
    return it->second;
}

} // namespace ntnt::cli
