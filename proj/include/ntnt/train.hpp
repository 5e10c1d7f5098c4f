#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "ntnt/data.hpp"
#include "ntnt/model.hpp"

namespace ntnt {

/// Optimizer/schedule/augmentation hyperparameters (pretrain defaults).
struct TrainConfig {
    int epochs = 150;
    std::string optimizer = "sgd";
    double momentum = 0.9;
    int batch_size = 32;
    double base_lr = 5e-2;
    std::string schedule = "cosine";
    double weight_decay = 1e-4;
    int warmup_epochs = 3;
    double label_smooth = 0.1;
    std::uint64_t seed = 0;
    bool deterministic = false;
    AugmentConfig augment;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig load_train_config(const std::string& path);

/// Mean over the batch of -sum_k q log softmax(logits), with the smoothed
/// target q = (1 - eps) * target + eps / K. Targets are treated as constants.
template <typename T>
Tensor<T> smoothed_ce_loss(const Tensor<T>& logits, const Tensor<T>& targets, double eps) {
    if (logits.rank() != 2 || logits.shape() != targets.shape())
        throw ShapeError("loss: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    const std::size_t b = logits.shape()[0], k = logits.shape()[1];
    std::vector<T> q(targets.size());
    auto td = targets.data();
    const double fill = eps / static_cast<double>(k);
    for (std::size_t i = 0; i < q.size(); ++i)
        q[i] = static_cast<T>((1.0 - eps) * static_cast<double>(td[i]) + fill);
    Tensor<T> smoothed(logits.shape(), std::move(q));
    Tensor<T> lp = log_softmax(logits, 1);
    return scale(sum_all(mul(lp, smoothed)), static_cast<T>(-1.0 / static_cast<double>(b)));
}

/// Piecewise schedule: linear warmup from base/warmup_steps to base across
/// warmup_epochs * steps_per_epoch steps, then cosine decay reaching exactly 0
/// at the last step (epochs * steps_per_epoch - 1).
double lr_at(long long step, const TrainConfig& cfg, long long steps_per_epoch);

/// One SGD-with-momentum update on a single tensor:
/// g += weight_decay * w; v = momentum * v + g; w -= lr * v.
/// `velocity` is resized to the parameter on first use.
template <typename T>
Tensor<T> sgd_update(const Tensor<T>& w, const Tensor<T>& grad, std::vector<T>& velocity,
                     double lr, double momentum, double weight_decay) {
    if (w.shape() != grad.shape())
        throw ShapeError("sgd: gradient " + shape_str(grad.shape()) + " does not match parameter " +
                         shape_str(w.shape()));
    if (velocity.empty()) velocity.assign(w.size(), T(0));
    if (velocity.size() != w.size()) throw ShapeError("sgd: stale velocity buffer");
    std::vector<T> out(w.size());
    auto wd = w.data();
    auto gd = grad.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        T g = gd[i] + static_cast<T>(weight_decay) * wd[i];
        velocity[i] = static_cast<T>(momentum) * velocity[i] + g;
        out[i] = wd[i] - static_cast<T>(lr) * velocity[i];
    }
    return Tensor<T>(w.shape(), std::move(out), /*requires_grad=*/true);
}

/// Positional tables, layer-norm affines and biases are excluded from decay.
bool weight_decay_applies(const std::string& param_name);

struct SgdState {
    std::unordered_map<std::string, std::vector<float>> velocity;
};

/// Applies sgd_update to every parameter that received a gradient.
void sgd_step(Model<float>& model, const GradientTape<float>& tape, double lr,
              const TrainConfig& cfg, SgdState& state);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double top1 = 0.0;
    double lr = 0.0; // learning rate of the last step in the epoch
    double images_per_sec = 0.0;
    double wall_time_sec = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    double best_top1 = 0.0;
    std::string last_checkpoint;
    std::string best_checkpoint;
};

/// Epoch loop: shuffle, augment, forward, smoothed loss, backward, SGD with
/// the cosine schedule. Writes one JSON line per epoch plus a final summary
/// line to `metrics` when given, and checkpoints (last + best accuracy) under
/// out_dir when non-empty. Throws NumericError on a NaN loss. In
/// deterministic mode timing fields are reported as 0 so logs are
/// byte-identical across runs.
TrainResult train(Model<float>& model, const DatasetHandle& data, const TrainConfig& cfg,
                  const std::string& out_dir, std::ostream* metrics = nullptr, int workers = 1);

/// Fraction of samples whose argmax logit equals the label (ties resolved to
/// the lowest class index). Test-time pipeline only.
double evaluate_top1(const Model<float>& model, const DatasetHandle& data,
                     const AugmentConfig& aug, int batch_size);

struct ThroughputReport {
    double mean_images_per_sec = 0.0;
    double std_images_per_sec = 0.0;
    int batch_size = 0;
    int timed_iters = 0;
};

/// Forward-only timing on synthetic batches after warmup.
ThroughputReport bench_throughput(const Model<float>& model, int batch_size, int warmup_iters,
                                  int timed_iters);

} // namespace ntnt
