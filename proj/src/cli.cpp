#include "ntnt/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "ntnt/checkpoint.hpp"
#include "ntnt/data.hpp"
#include "ntnt/gradcheck.hpp"
#include "ntnt/train.hpp"

namespace ntnt::cli {

namespace {

constexpr double kGradCheckThreshold = 1e-4;

ModelConfig resolve_model_config(const RunSpec& spec, const std::string& fallback_preset) {
    if (!spec.model_config_path.empty()) return load_model_config(spec.model_config_path);
    if (fallback_preset.empty()) throw ConfigError(spec.command + ": --model-config is required");
    return model_config_from_json(preset_model_config(fallback_preset));
}

TrainConfig resolve_train_config(const RunSpec& spec, const ModelConfig& model_cfg) {
    TrainConfig cfg;
    if (!spec.train_config_path.empty()) {
        cfg = load_train_config(spec.train_config_path);
    } else {
        cfg.augment.target_size = model_cfg.image_size;
    }
    if (spec.seed) cfg.seed = *spec.seed;
    if (spec.deterministic) cfg.deterministic = true;
    return cfg;
}

DatasetHandle resolve_dataset(const RunSpec& spec, const ModelConfig& model_cfg,
                              const std::string& split, std::uint64_t seed) {
    const std::string& kind = spec.dataset_kind;
    if (kind == "synthetic")
        return make_synthetic(split == "train" ? 64 : 32, model_cfg.image_size, seed, split);
    if (spec.data_path.empty())
        throw ConfigError(spec.command + ": --data is required for dataset kind '" + kind + "'");
    if (kind == "cifar10") return load_cifar(spec.data_path, CifarFlavor::cifar10, split);
    if (kind == "cifar100") return load_cifar(spec.data_path, CifarFlavor::cifar100, split);
    if (kind == "folder") return load_folder_dataset(spec.data_path);
    throw ConfigError("unknown dataset kind '" + kind +
                      "' (expected cifar10, cifar100, folder or synthetic)");
}

struct NamedConfig {
    std::string name;
    ModelConfig cfg;
};

std::vector<NamedConfig> bench_targets(const RunSpec& spec) {
    if (!spec.model_config_path.empty())
        return {{std::filesystem::path(spec.model_config_path).stem().string(),
                 load_model_config(spec.model_config_path)}};
    std::vector<NamedConfig> out;
    for (const char* name : {"vit_s", "tnt_s", "nested_tnt_s"})
        out.push_back({name, model_config_from_json(preset_model_config(name))});
    return out;
}

int cmd_params(const RunSpec& spec, std::ostream& out) {
    out << "model           params        params(M)\n";
    for (const auto& [name, cfg] : bench_targets(spec)) {
        Model<float> model = build_model<float>(cfg, spec.seed.value_or(0));
        const std::size_t count = count_params(model);
        out << std::left << std::setw(16) << name << std::setw(14) << count << std::fixed
            << std::setprecision(2) << static_cast<double>(count) / 1e6 << "\n";
    }
    return 0;
}

int cmd_gradcheck(const RunSpec& spec, std::ostream& out) {
    const ModelConfig cfg = resolve_model_config(spec, "minimal");
    const std::uint64_t seed = spec.seed.value_or(0);
    auto loss_fn = [&](const Model<double>& m, const Tensor<double>& images) {
        Tensor<double> logits = model_forward(images, m);
        const std::size_t b = logits.shape()[0], k = logits.shape()[1];
        std::vector<double> t(b * k, 0.0);
        for (std::size_t i = 0; i < b; ++i) t[i * k + i % k] = 1.0;
        return smoothed_ce_loss(logits, Tensor<double>({b, k}, std::move(t)), 0.1);
    };
    GradCheckReport report = model_grad_check(cfg, seed, 1, loss_fn);
    out << "gradcheck: max relative error " << std::scientific << std::setprecision(3)
        << report.max_rel_err << " over " << report.params_checked << " parameter tensors (worst: "
        << report.worst_param << "), threshold " << kGradCheckThreshold << "\n";
    if (!(report.max_rel_err < kGradCheckThreshold))
        throw NumericError("gradcheck failed: " + std::to_string(report.max_rel_err) +
                           " >= " + std::to_string(kGradCheckThreshold));
    out << "gradcheck: PASS\n";
    return 0;
}

int cmd_train(const RunSpec& spec, std::ostream& out) {
    const ModelConfig model_cfg =
        resolve_model_config(spec, spec.dataset_kind == "synthetic" ? "toy" : "");
    TrainConfig cfg = resolve_train_config(spec, model_cfg);
    DatasetHandle data = resolve_dataset(spec, model_cfg, "train", cfg.seed);

    Model<float> model = build_model<float>(model_cfg, cfg.seed);
    if (!spec.checkpoint_path.empty()) {
        const std::size_t copied = checkpoint_warm_start(model, spec.checkpoint_path);
        out << "train: warm start loaded " << copied << " tensors from " << spec.checkpoint_path
            << "\n";
    }

    const std::string out_dir = spec.out_dir.empty() ? "run" : spec.out_dir;
    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(std::filesystem::path(out_dir) / "metrics.jsonl",
                          std::ios::trunc);
    if (!metrics) throw DataError("train: cannot write metrics under " + out_dir);
    TrainResult result = train(model, data, cfg, out_dir, &metrics, spec.workers);
    out << "train: " << cfg.epochs << " epochs, final loss " << std::fixed
        << std::setprecision(4) << result.history.back().loss << ", best top1 "
        << std::setprecision(4) << result.best_top1 << ", metrics in " << out_dir
        << "/metrics.jsonl\n";
    return 0;
}

int cmd_eval(const RunSpec& spec, std::ostream& out) {
    if (spec.checkpoint_path.empty()) throw ConfigError("eval: --checkpoint is required");
    Model<float> model = checkpoint_load<float>(spec.checkpoint_path);
    AugmentConfig aug;
    aug.target_size = model.config.image_size;
    DatasetHandle data = resolve_dataset(spec, model.config, "test", spec.seed.value_or(0));
    const double top1 = evaluate_top1(model, data, aug, 32);
    nlohmann::json j;
    j["samples"] = data.size();
    j["top1"] = top1;
    out << j.dump() << "\n";
    return 0;
}

int cmd_bench(const RunSpec& spec, std::ostream& out) {
    out << "model           batch  im/sec(mean)  im/sec(std)\n";
    for (const auto& [name, cfg] : bench_targets(spec)) {
        Model<float> model = build_model<float>(cfg, spec.seed.value_or(0));
        ThroughputReport r =
            bench_throughput(model, spec.bench_batch, spec.bench_warmup, spec.bench_iters);
        out << std::left << std::setw(16) << name << std::setw(7) << r.batch_size << std::fixed
            << std::setprecision(2) << std::setw(14) << r.mean_images_per_sec << std::setw(12)
            << r.std_images_per_sec << "\n";
    }
    return 0;
}

} // namespace

int run(const RunSpec& spec, std::ostream& out, std::ostream& err) {
    try {
        if (spec.command == "params") return cmd_params(spec, out);
        if (spec.command == "gradcheck") return cmd_gradcheck(spec, out);
        if (spec.command == "train") return cmd_train(spec, out);
        if (spec.command == "eval") return cmd_eval(spec, out);
        if (spec.command == "bench") return cmd_bench(spec, out);
        throw ConfigError("unknown command '" + spec.command + "'");
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return 4;
    }
}

} // namespace ntnt::cli
