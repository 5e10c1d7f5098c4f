#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace ntnt::cli {

/// Parsed command invocation. Paths left empty fall back to bundled presets
/// where the command defines one.
struct RunSpec {
    std::string command; // train | eval | params | gradcheck | bench
    std::string model_config_path;
    std::string train_config_path;
    std::string data_path;
    std::string dataset_kind; // cifar10 | cifar100 | folder | synthetic
    std::string out_dir;
    std::string checkpoint_path;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    int workers = 1;
    int bench_batch = 2;
    int bench_warmup = 1;
    int bench_iters = 3;
};

/// Executes a spec. Returns the process exit status:
/// 0 success, 2 config error, 3 data error, 4 numerical failure.
int run(const RunSpec& spec, std::ostream& out, std::ostream& err);

/// Bundled model configs: "vit_s", "tnt_s", "nested_tnt_s", "minimal", "toy".
const std::string& preset_model_config(const std::string& name);

/// Bundled train configs: "toy".
const std::string& preset_train_config(const std::string& name);

} // namespace ntnt::cli
