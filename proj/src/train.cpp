#include "ntnt/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <ostream>

#include <json.hpp>

#include "ntnt/checkpoint.hpp"

namespace ntnt {

using Clock = std::chrono::steady_clock;

double lr_at(long long step, const TrainConfig& cfg, long long steps_per_epoch) {
    if (step < 0) step = 0;
    const long long warmup = static_cast<long long>(cfg.warmup_epochs) * steps_per_epoch;
    const long long total = static_cast<long long>(cfg.epochs) * steps_per_epoch;
    if (warmup > 0 && step < warmup)
        return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long long span = (total - 1) - warmup; // t = 1 exactly at the last step
    if (span <= 0) return step >= total - 1 ? 0.0 : cfg.base_lr;
    double t = static_cast<double>(step - warmup) / static_cast<double>(span);
    t = std::clamp(t, 0.0, 1.0);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

bool weight_decay_applies(const std::string& name) {
    auto ends_with = [&](const char* suffix) { return name.ends_with(suffix); };
    if (ends_with(".bias") || ends_with(".gamma") || ends_with(".beta") || ends_with(".b1") ||
        ends_with(".b2"))
        return false;
    if (name == "embed.word_pos" || name == "embed.sentence_pos") return false;
    return true;
}

void sgd_step(Model<float>& model, const GradientTape<float>& tape, double lr,
              const TrainConfig& cfg, SgdState& state) {
    visit_params(model, [&](const std::string& name, Tensor<float>& w) {
        if (!tape.has_grad(w)) return;
        const double wd = weight_decay_applies(name) ? cfg.weight_decay : 0.0;
        w = sgd_update(w, tape.grad(w), state.velocity[name], lr, cfg.momentum, wd);
    });
}

namespace {

std::size_t argmax_row(std::span<const float> row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = i; // strict >: ties go to the lowest index
    return best;
}

std::string metrics_line(const EpochMetrics& em) {
    nlohmann::json j;
    j["epoch"] = em.epoch;
    j["loss"] = em.loss;
    j["top1"] = em.top1;
    j["lr"] = em.lr;
    j["images_per_sec"] = em.images_per_sec;
    j["wall_time_sec"] = em.wall_time_sec;
    return j.dump();
}

} // namespace

TrainResult train(Model<float>& model, const DatasetHandle& data, const TrainConfig& cfg,
                  const std::string& out_dir, std::ostream* metrics, int workers) {
    cfg.validate();
    if (data.size() == 0) throw DataError("train: empty dataset");
    if (static_cast<std::size_t>(data.num_classes) != model.config.num_classes)
        throw ConfigError("train: dataset has " + std::to_string(data.num_classes) +
                          " classes, model expects " + std::to_string(model.config.num_classes));
    if (cfg.augment.target_size != model.config.image_size)
        throw ConfigError("train: augment target_size " + std::to_string(cfg.augment.target_size) +
                          " does not match model image_size " +
                          std::to_string(model.config.image_size));
    if (cfg.deterministic) workers = 1;

    const std::size_t n = data.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    const long long steps_per_epoch = static_cast<long long>((n + bs - 1) / bs);

    TrainResult result;
    SgdState opt_state;
    long long gstep = 0;
    const std::filesystem::path out(out_dir);
    if (!out_dir.empty()) std::filesystem::create_directories(out);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        Rng shuffle_rng = Rng(cfg.seed).fork(0x73687566u + static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order = shuffle_rng.permutation(n);

        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        double last_lr = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t stop = std::min(n, start + bs);
            std::vector<Tensor<float>> images;
            std::vector<int> labels;
            images.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                images.push_back(data.images[order[i]]);
                labels.push_back(data.labels[order[i]]);
            }
            Rng aug_rng = Rng(cfg.seed)
                              .fork(0x61756700u + static_cast<std::uint64_t>(epoch))
                              .fork(start / bs);
            Batch batch = augment(images, labels, data.num_classes, cfg.augment, aug_rng, workers);

            GradientTape<float> tape;
            Tensor<float> logits = model_forward(batch.images, model);
            Tensor<float> loss = smoothed_ce_loss(logits, batch.targets, cfg.label_smooth);
            const double loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw NumericError("train: loss diverged at step " + std::to_string(gstep));

            auto ld = logits.data();
            for (std::size_t i = 0; i < labels.size(); ++i) {
                auto row = ld.subspan(i * model.config.num_classes, model.config.num_classes);
                if (argmax_row(row) == static_cast<std::size_t>(labels[i])) ++correct;
            }

            tape.backward(loss);
            last_lr = lr_at(gstep, cfg, steps_per_epoch);
            sgd_step(model, tape, last_lr, cfg, opt_state);
            loss_sum += loss_value * static_cast<double>(labels.size());
            seen += labels.size();
            ++gstep;
        }

        const double wall = std::chrono::duration<double>(Clock::now() - t0).count();
        EpochMetrics em;
        em.epoch = epoch;
        em.loss = loss_sum / static_cast<double>(seen);
        em.top1 = static_cast<double>(correct) / static_cast<double>(seen);
        em.lr = last_lr;
        em.images_per_sec = cfg.deterministic ? 0.0 : static_cast<double>(seen) / wall;
        em.wall_time_sec = cfg.deterministic ? 0.0 : wall;
        result.history.push_back(em);
        if (metrics) *metrics << metrics_line(em) << "\n";

        if (!out_dir.empty()) {
            result.last_checkpoint = (out / "last.ckpt").string();
            checkpoint_save(model, result.last_checkpoint);
            if (em.top1 > result.best_top1 || result.best_checkpoint.empty()) {
                result.best_checkpoint = (out / "best.ckpt").string();
                checkpoint_save(model, result.best_checkpoint);
            }
        }
        result.best_top1 = std::max(result.best_top1, em.top1);
    }

    if (metrics) {
        nlohmann::json j;
        j["type"] = "summary";
        j["epochs"] = cfg.epochs;
        j["final_loss"] = result.history.back().loss;
        j["best_top1"] = result.best_top1;
        j["params"] = count_params(model);
        *metrics << j.dump() << "\n";
    }
    return result;
}

double evaluate_top1(const Model<float>& model, const DatasetHandle& data,
                     const AugmentConfig& aug, int batch_size) {
    if (data.size() == 0) throw DataError("evaluate: empty dataset");
    if (aug.target_size != model.config.image_size)
        throw ConfigError("evaluate: target_size does not match model image_size");
    const std::size_t n = data.size();
    const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += bs) {
        const std::size_t stop = std::min(n, start + bs);
        std::vector<Tensor<float>> images(data.images.begin() + static_cast<long>(start),
                                          data.images.begin() + static_cast<long>(stop));
        std::vector<int> labels(data.labels.begin() + static_cast<long>(start),
                                data.labels.begin() + static_cast<long>(stop));
        Batch batch = eval_batch(images, labels, data.num_classes, aug);
        Tensor<float> logits = model_forward(batch.images, model);
        auto ld = logits.data();
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto row = ld.subspan(i * model.config.num_classes, model.config.num_classes);
            if (argmax_row(row) == static_cast<std::size_t>(labels[i])) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

ThroughputReport bench_throughput(const Model<float>& model, int batch_size, int warmup_iters,
                                  int timed_iters) {
    if (warmup_iters < 1) throw ConfigError("bench: warmup_iters must be >= 1");
    if (timed_iters < 1) throw ConfigError("bench: timed_iters must be >= 1");
    const std::size_t b = static_cast<std::size_t>(std::max(1, batch_size));
    const std::size_t s = model.config.image_size;
    Rng rng = Rng::for_name(0, "bench.input");
    std::vector<float> px(b * 3 * s * s);
    for (auto& v : px) v = static_cast<float>(rng.uniform());
    Tensor<float> input({b, 3, s, s}, std::move(px));

    for (int i = 0; i < warmup_iters; ++i) model_forward(input, model);
    std::vector<double> ips(static_cast<std::size_t>(timed_iters));
    for (int i = 0; i < timed_iters; ++i) {
        const auto t0 = Clock::now();
        model_forward(input, model);
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        ips[static_cast<std::size_t>(i)] = static_cast<double>(b) / secs;
    }
    double mean = 0.0;
    for (double v : ips) mean += v;
    mean /= static_cast<double>(ips.size());
    double var = 0.0;
    for (double v : ips) var += (v - mean) * (v - mean);
    var /= static_cast<double>(ips.size());
    return {mean, std::sqrt(var), static_cast<int>(b), timed_iters};
}

} // namespace ntnt
