#include <iostream>

#include <CLI11.hpp>

#include "ntnt/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"ViT / TNT / Nested-TNT: build, train, evaluate, audit and benchmark"};
    app.require_subcommand(1);

    ntnt::cli::RunSpec spec;
    std::uint64_t seed_value = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--model-config", spec.model_config_path, "Model config JSON path")
            ->envname("NTNT_MODEL_CONFIG");
        auto* seed_opt =
            cmd->add_option("--seed", seed_value, "Seed override")->envname("NTNT_SEED");
        cmd->add_flag("--deterministic", spec.deterministic,
                      "Single-threaded, byte-reproducible outputs")
            ->envname("NTNT_DETERMINISTIC");
        cmd->add_option("--workers", spec.workers, "Data-pipeline worker threads")
            ->envname("NTNT_WORKERS");
        cmd->callback([&, seed_opt] {
            if (seed_opt->count()) spec.seed = seed_value;
        });
        return cmd;
    };
    auto add_data = [&](CLI::App* cmd) {
        cmd->add_option("--data", spec.data_path, "Dataset path")->envname("NTNT_DATA");
        cmd->add_option("--dataset-kind", spec.dataset_kind,
                        "cifar10 | cifar100 | folder | synthetic")
            ->envname("NTNT_DATASET_KIND");
    };

    CLI::App* train = add_common(app.add_subcommand("train", "Train a model"));
    add_data(train);
    train->add_option("--config", spec.train_config_path, "Train config JSON path")
        ->envname("NTNT_TRAIN_CONFIG");
    train->add_option("--out", spec.out_dir, "Output directory (metrics, checkpoints)")
        ->envname("NTNT_OUT");
    train->add_option("--checkpoint", spec.checkpoint_path, "Warm-start checkpoint")
        ->envname("NTNT_CHECKPOINT");

    CLI::App* eval = add_common(app.add_subcommand("eval", "Evaluate a checkpoint"));
    add_data(eval);
    eval->add_option("--checkpoint", spec.checkpoint_path, "Checkpoint to evaluate")
        ->envname("NTNT_CHECKPOINT");

    add_common(app.add_subcommand("params", "Parameter audit for the bundled model family"));

    add_common(app.add_subcommand("gradcheck",
                                  "End-to-end finite-difference gradient check (64-bit)"));

    CLI::App* bench = add_common(app.add_subcommand("bench", "Forward throughput benchmark"));
    bench->add_option("--batch", spec.bench_batch, "Benchmark batch size");
    bench->add_option("--warmup", spec.bench_warmup, "Warmup iterations");
    bench->add_option("--iters", spec.bench_iters, "Timed iterations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }
    spec.command = app.get_subcommands().front()->get_name();
    return ntnt::cli::run(spec, std::cout, std::cerr);
}
