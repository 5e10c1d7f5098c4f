#include "ntnt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ntnt/train.hpp"

namespace ntnt {

using nlohmann::json;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::vit: return "vit";
        case Variant::tnt: return "tnt";
        case Variant::nested_tnt: return "nested_tnt";
    }
    return "vit";
}

Variant variant_from_string(const std::string& s) {
    if (s == "vit") return Variant::vit;
    if (s == "tnt") return Variant::tnt;
    if (s == "nested_tnt") return Variant::nested_tnt;
    throw ConfigError("unknown variant '" + s + "' (expected vit, tnt or nested_tnt)");
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("model config: " + msg);
    };
    require(image_size > 0 && patch_size > 0, "image_size and patch_size must be positive");
    require(image_size % patch_size == 0, "image_size must be divisible by patch_size");
    require(outer_dim > 0 && outer_heads > 0, "outer_dim and outer_heads must be positive");
    require(outer_dim % outer_heads == 0, "outer_dim must be divisible by outer_heads");
    require(depth >= 1, "depth must be >= 1");
    require(mlp_ratio >= 1, "mlp_ratio must be >= 1");
    require(num_classes >= 1, "num_classes must be >= 1");
    if (has_inner()) {
        require(word_size > 0, "word_size must be positive for tnt/nested_tnt");
        require(patch_size % word_size == 0, "patch_size must be divisible by word_size");
        require(inner_dim > 0 && inner_heads > 0,
                "inner_dim and inner_heads must be positive for tnt/nested_tnt");
        require(inner_dim % inner_heads == 0, "inner_dim must be divisible by inner_heads");
    } else {
        require(word_size == 0 && inner_dim == 0 && inner_heads == 0,
                "vit takes no word/inner fields");
    }
    if (!has_fusion())
        require(fusion_hidden == 0, "fusion_hidden applies to nested_tnt only");
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw ConfigError(what + ": unknown key '" + item.key() + "'");
}

std::size_t get_size(const json& j, const std::string& key, std::size_t fallback,
                     bool required = false) {
    if (!j.contains(key)) {
        if (required) throw ConfigError("model config: missing key '" + key + "'");
        return fallback;
    }
    if (!j.at(key).is_number_unsigned())
        throw ConfigError("model config: key '" + key + "' must be a non-negative integer");
    return j.at(key).get<std::size_t>();
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

ModelConfig model_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
    check_keys(j,
               {"variant", "image_size", "patch_size", "word_size", "outer_dim", "inner_dim",
                "outer_heads", "inner_heads", "depth", "mlp_ratio", "num_classes",
                "fusion_hidden"},
               "model config");
    if (!j.contains("variant") || !j.at("variant").is_string())
        throw ConfigError("model config: missing string key 'variant'");
    ModelConfig cfg;
    cfg.variant = variant_from_string(j.at("variant").get<std::string>());
    cfg.image_size = get_size(j, "image_size", 224);
    cfg.patch_size = get_size(j, "patch_size", 16);
    cfg.outer_dim = get_size(j, "outer_dim", 0, true);
    cfg.outer_heads = get_size(j, "outer_heads", 0, true);
    cfg.depth = get_size(j, "depth", 0, true);
    cfg.mlp_ratio = get_size(j, "mlp_ratio", 4);
    cfg.num_classes = get_size(j, "num_classes", 0, true);
    const bool inner = cfg.variant != Variant::vit;
    cfg.word_size = get_size(j, "word_size", 0, inner);
    cfg.inner_dim = get_size(j, "inner_dim", 0, inner);
    cfg.inner_heads = get_size(j, "inner_heads", 0, inner);
    cfg.fusion_hidden = get_size(j, "fusion_hidden", 0);
    cfg.validate();
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["variant"] = to_string(cfg.variant);
    j["image_size"] = cfg.image_size;
    j["patch_size"] = cfg.patch_size;
    j["outer_dim"] = cfg.outer_dim;
    j["outer_heads"] = cfg.outer_heads;
    j["depth"] = cfg.depth;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["num_classes"] = cfg.num_classes;
    if (cfg.has_inner()) {
        j["word_size"] = cfg.word_size;
        j["inner_dim"] = cfg.inner_dim;
        j["inner_heads"] = cfg.inner_heads;
    }
    if (cfg.has_fusion() && cfg.fusion_hidden != 0) j["fusion_hidden"] = cfg.fusion_hidden;
    return j.dump(); // keys are stored sorted; compact dump is the canonical form
}

ModelConfig load_model_config(const std::string& path) {
    return model_config_from_json(read_text_file(path));
}

// --------------------------------------------------------------------------
// Augment + train configs
// --------------------------------------------------------------------------

void AugmentConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("augment config: " + msg);
    };
    require(crop_scale_min > 0.0 && crop_scale_max <= 1.0 && crop_scale_min <= crop_scale_max,
            "crop scale range must lie within (0, 1]");
    require(flip_probability >= 0.0 && flip_probability <= 1.0,
            "flip_probability must be in [0, 1]");
    require(mixup_alpha > 0.0, "mixup_alpha must be positive");
    require(target_size >= 1, "target_size must be >= 1");
    require(interpolation == "bicubic", "only bicubic interpolation is supported");
    require(norm_std > 0.0, "norm_std must be positive");
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("train config: " + msg);
    };
    require(epochs >= 1, "epochs must be >= 1");
    require(optimizer == "sgd", "only the sgd optimizer is supported");
    require(schedule == "cosine", "only the cosine schedule is supported");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(base_lr > 0.0, "base_lr must be positive");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(warmup_epochs >= 0 && warmup_epochs < epochs, "warmup_epochs must be < epochs");
    require(label_smooth >= 0.0 && label_smooth < 1.0, "label_smooth must be in [0, 1)");
    augment.validate();
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    check_keys(j,
               {"epochs", "optimizer", "momentum", "batch_size", "base_lr", "schedule",
                "weight_decay", "warmup_epochs", "label_smooth", "seed", "deterministic",
                "augment"},
               "train config");
    TrainConfig cfg;
    try {
        if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
        if (j.contains("optimizer")) cfg.optimizer = j.at("optimizer").get<std::string>();
        if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
        if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
        if (j.contains("base_lr")) cfg.base_lr = j.at("base_lr").get<double>();
        if (j.contains("schedule")) cfg.schedule = j.at("schedule").get<std::string>();
        if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("warmup_epochs")) cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
        if (j.contains("label_smooth")) cfg.label_smooth = j.at("label_smooth").get<double>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("deterministic")) cfg.deterministic = j.at("deterministic").get<bool>();
        if (j.contains("augment")) {
            const json& a = j.at("augment");
            check_keys(a,
                       {"enabled", "crop_scale_min", "crop_scale_max", "flip_probability",
                        "mixup_alpha", "target_size", "interpolation", "norm_mean", "norm_std"},
                       "augment config");
            AugmentConfig& ac = cfg.augment;
            if (a.contains("enabled")) ac.enabled = a.at("enabled").get<bool>();
            if (a.contains("crop_scale_min")) ac.crop_scale_min = a.at("crop_scale_min").get<double>();
            if (a.contains("crop_scale_max")) ac.crop_scale_max = a.at("crop_scale_max").get<double>();
            if (a.contains("flip_probability"))
                ac.flip_probability = a.at("flip_probability").get<double>();
            if (a.contains("mixup_alpha")) ac.mixup_alpha = a.at("mixup_alpha").get<double>();
            if (a.contains("target_size")) ac.target_size = a.at("target_size").get<std::size_t>();
            if (a.contains("interpolation"))
                ac.interpolation = a.at("interpolation").get<std::string>();
            if (a.contains("norm_mean")) ac.norm_mean = a.at("norm_mean").get<double>();
            if (a.contains("norm_std")) ac.norm_std = a.at("norm_std").get<double>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json a;
    a["enabled"] = cfg.augment.enabled;
    a["crop_scale_min"] = cfg.augment.crop_scale_min;
    a["crop_scale_max"] = cfg.augment.crop_scale_max;
    a["flip_probability"] = cfg.augment.flip_probability;
    a["mixup_alpha"] = cfg.augment.mixup_alpha;
    a["target_size"] = cfg.augment.target_size;
    a["interpolation"] = cfg.augment.interpolation;
    a["norm_mean"] = cfg.augment.norm_mean;
    a["norm_std"] = cfg.augment.norm_std;
    json j;
    j["epochs"] = cfg.epochs;
    j["optimizer"] = cfg.optimizer;
    j["momentum"] = cfg.momentum;
    j["batch_size"] = cfg.batch_size;
    j["base_lr"] = cfg.base_lr;
    j["schedule"] = cfg.schedule;
    j["weight_decay"] = cfg.weight_decay;
    j["warmup_epochs"] = cfg.warmup_epochs;
    j["label_smooth"] = cfg.label_smooth;
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    j["augment"] = a;
    return j.dump();
}

TrainConfig load_train_config(const std::string& path) {
    return train_config_from_json(read_text_file(path));
}

} // namespace ntnt
