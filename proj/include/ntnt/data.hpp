#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ntnt/rng.hpp"
#include "ntnt/tensor.hpp"

namespace ntnt {

/// Decoded dataset: images as [3, H, W] tensors with scalars in [0, 1].
struct DatasetHandle {
    std::vector<Tensor<float>> images;
    std::vector<int> labels;
    int num_classes = 0;
    std::string split; // "train" or "test"

    std::size_t size() const { return images.size(); }
};

enum class CifarFlavor { cifar10, cifar100 };

/// Standard CIFAR binary layout: per record one label byte (cifar10) or two
/// (cifar100, coarse then fine; the fine label is used), then 3072 pixel
/// bytes as three 1024-byte row-major channel planes (R, G, B).
DatasetHandle load_cifar(const std::string& dir, CifarFlavor flavor, const std::string& split);

/// One sub-directory per class (class index = lexicographic rank of the
/// directory name), images as 8-bit RGB files; file order within a class is
/// lexicographic.
DatasetHandle load_folder_dataset(const std::string& dir);

/// Bundled 2-class fixture: linearly separable bright-half patterns with
/// deterministic noise. Split "train" and "test" draw disjoint streams.
DatasetHandle make_synthetic(std::size_t count, std::size_t image_size, std::uint64_t seed,
                             const std::string& split = "train");

/// Catmull-Rom (a = -0.5) cubic weights for a fractional offset t in [0, 1):
/// taps at floor(x)-1 .. floor(x)+2.
void bicubic_weights(double t, double w[4]);

/// Separable Catmull-Rom resize with edge-clamped sampling; output clipped to
/// [0, 1].
Tensor<float> resize_bicubic(const Tensor<float>& img, std::size_t out_size);

/// Augmentation settings (train-time randomization; the test-time pipeline is
/// resize + normalize only).
struct AugmentConfig {
    double crop_scale_min = 0.8;
    double crop_scale_max = 1.0;
    double flip_probability = 0.5;
    double mixup_alpha = 0.8;
    std::size_t target_size = 224;
    std::string interpolation = "bicubic";
    double norm_mean = 0.5;
    double norm_std = 0.5;
    bool enabled = true;

    void validate() const;
};

/// One training batch: images [B, 3, S, S] (normalized) and target
/// distributions [B, K] whose rows sum to 1.
struct Batch {
    Tensor<float> images;
    Tensor<float> targets;
};

Tensor<float> flip_horizontal(const Tensor<float>& img);
Tensor<float> normalize_image(const Tensor<float>& img, double mean, double stddev);

/// Area-scaled random crop (uniform scale in [crop_scale_min, crop_scale_max],
/// uniform position) followed by bicubic resize to target_size.
Tensor<float> random_resized_crop(const Tensor<float>& img, const AugmentConfig& cfg, Rng& rng);

/// lambda * batch + (1 - lambda) * batch[perm], applied to images and targets.
Batch mixup_apply(const Batch& batch, float lambda, const std::vector<std::size_t>& perm);

/// Full train-time pipeline: per image crop/resize/flip/normalize with an RNG
/// stream forked per sample index (reproducible for any worker split), then
/// batch-level mixup. With cfg.enabled == false this is the test-time
/// pipeline plus one-hot targets.
Batch augment(const std::vector<Tensor<float>>& images, const std::vector<int>& labels,
              int num_classes, const AugmentConfig& cfg, Rng& rng, int workers = 1);

/// Test-time pipeline: bicubic resize + normalization, one-hot targets.
Batch eval_batch(const std::vector<Tensor<float>>& images, const std::vector<int>& labels,
                 int num_classes, const AugmentConfig& cfg);

} // namespace ntnt
