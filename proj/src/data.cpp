#include "ntnt/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "ntnt/image_io.hpp"

namespace ntnt {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide; // 3072

void load_cifar_file(const std::string& path, std::size_t label_bytes, int num_classes,
                     DatasetHandle& out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cifar: cannot open " + path);
    is.seekg(0, std::ios::end);
    const std::size_t file_size = static_cast<std::size_t>(is.tellg());
    is.seekg(0, std::ios::beg);
    const std::size_t record = label_bytes + kCifarPixels;
    if (file_size == 0 || file_size % record != 0)
        throw DataError("cifar: " + path + " length " + std::to_string(file_size) +
                        " is not a multiple of the record size " + std::to_string(record));
    const std::size_t count = file_size / record;
    std::vector<unsigned char> buf(record);
    for (std::size_t r = 0; r < count; ++r) {
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record)))
            throw DataError("cifar: truncated read in " + path);
        const int label = buf[label_bytes - 1]; // cifar100: coarse byte first, fine second
        if (label >= num_classes)
            throw DataError("cifar: label " + std::to_string(label) + " out of range in " + path);
        std::vector<float> pixels(kCifarPixels);
        for (std::size_t i = 0; i < kCifarPixels; ++i)
            pixels[i] = static_cast<float>(buf[label_bytes + i]) / 255.0f;
        out.images.emplace_back(Shape{3, kCifarSide, kCifarSide}, std::move(pixels));
        out.labels.push_back(label);
    }
}

} // namespace

DatasetHandle load_cifar(const std::string& dir, CifarFlavor flavor, const std::string& split) {
    if (split != "train" && split != "test")
        throw DataError("cifar: split must be 'train' or 'test', got '" + split + "'");
    DatasetHandle out;
    out.split = split;
    out.num_classes = flavor == CifarFlavor::cifar10 ? 10 : 100;
    const std::size_t label_bytes = flavor == CifarFlavor::cifar10 ? 1 : 2;
    std::vector<std::string> files;
    if (flavor == CifarFlavor::cifar10) {
        if (split == "train")
            for (int i = 1; i <= 5; ++i)
                files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
        else
            files.push_back(dir + "/test_batch.bin");
    } else {
        files.push_back(dir + (split == "train" ? "/train.bin" : "/test.bin"));
    }
    for (const auto& f : files) load_cifar_file(f, label_bytes, out.num_classes, out);
    return out;
}

DatasetHandle load_folder_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("folder dataset: " + dir + " is not a directory");
    std::vector<std::string> class_dirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError("folder dataset: no class directories in " + dir);
    DatasetHandle out;
    out.split = "train";
    out.num_classes = static_cast<int>(class_dirs.size());
    for (std::size_t ci = 0; ci < class_dirs.size(); ++ci) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(fs::path(dir) / class_dirs[ci]))
            if (entry.is_regular_file()) files.push_back(entry.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("folder dataset: class directory " + class_dirs[ci] + " is empty");
        for (const auto& f : files) {
            out.images.push_back(decode_image_file(f));
            out.labels.push_back(static_cast<int>(ci));
        }
    }
    return out;
}

DatasetHandle make_synthetic(std::size_t count, std::size_t image_size, std::uint64_t seed,
                             const std::string& split) {
    DatasetHandle out;
    out.split = split;
    out.num_classes = 2;
    Rng base = Rng(seed).fork(split == "train" ? 1 : 2);
    const std::size_t s = image_size;
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = base.fork(i);
        const int label = static_cast<int>(i % 2);
        std::vector<float> px(3 * s * s);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < s; ++y)
                for (std::size_t x = 0; x < s; ++x) {
                    const bool left = x < s / 2;
                    const bool bright = (label == 0) == left;
                    const double v = (bright ? 0.8 : 0.2) + rng.uniform(-0.15, 0.15);
                    px[(c * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
        out.images.emplace_back(Shape{3, s, s}, std::move(px));
        out.labels.push_back(label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bicubic resize
// ---------------------------------------------------------------------------

void bicubic_weights(double t, double w[4]) {
    // Catmull-Rom kernel, a = -0.5; taps at offsets -1-t, -t, 1-t, 2-t.
    constexpr double a = -0.5;
    auto k = [](double x) {
        x = std::fabs(x);
        if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
        if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
        return 0.0;
    };
    w[0] = k(t + 1.0);
    w[1] = k(t);
    w[2] = k(1.0 - t);
    w[3] = k(2.0 - t);
}

namespace {

// One separable pass along the last axis of a [rows, len_in] plane view.
void resample_axis(const float* in, std::size_t rows, std::size_t len_in, float* out,
                   std::size_t len_out) {
    const double scale = static_cast<double>(len_in) / static_cast<double>(len_out);
    std::vector<int> base(len_out);
    std::vector<std::array<double, 4>> weights(len_out);
    for (std::size_t o = 0; o < len_out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double fl = std::floor(src);
        base[o] = static_cast<int>(fl);
        bicubic_weights(src - fl, weights[o].data());
    }
    const auto clamp_idx = [len_in](int i) {
        return static_cast<std::size_t>(std::clamp<int>(i, 0, static_cast<int>(len_in) - 1));
    };
    for (std::size_t r = 0; r < rows; ++r) {
        const float* src_row = in + r * len_in;
        float* dst_row = out + r * len_out;
        for (std::size_t o = 0; o < len_out; ++o) {
            double acc = 0.0;
            for (int tap = -1; tap <= 2; ++tap)
                acc += weights[o][static_cast<std::size_t>(tap + 1)] *
                       static_cast<double>(src_row[clamp_idx(base[o] + tap)]);
            dst_row[o] = static_cast<float>(acc);
        }
    }
}

} // namespace

Tensor<float> resize_bicubic(const Tensor<float>& img, std::size_t out_size) {
    const Shape& s = img.shape();
    if (s.size() != 3 || s[0] != 3) throw DataError("resize: expected [3, H, W] image");
    const std::size_t h = s[1], w = s[2];
    if (h < 2 || w < 2 || out_size < 1)
        throw DataError("resize: degenerate size " + shape_str(s) + " -> " +
                        std::to_string(out_size));
    // Horizontal pass: [3*H, W] -> [3*H, out], then transpose-free vertical
    // pass by resampling columns via a transposed buffer.
    std::vector<float> horiz(3 * h * out_size);
    resample_axis(img.data().data(), 3 * h, w, horiz.data(), out_size);
    // Transpose each channel to [out, H] rows so the vertical pass is again a
    // last-axis resample.
    std::vector<float> transposed(3 * out_size * h);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < out_size; ++x)
                transposed[(c * out_size + x) * h + y] = horiz[(c * h + y) * out_size + x];
    std::vector<float> vert(3 * out_size * out_size);
    resample_axis(transposed.data(), 3 * out_size, h, vert.data(), out_size);
    std::vector<float> out(3 * out_size * out_size);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t x = 0; x < out_size; ++x)
            for (std::size_t y = 0; y < out_size; ++y)
                out[(c * out_size + y) * out_size + x] =
                    std::clamp(vert[(c * out_size + x) * out_size + y], 0.0f, 1.0f);
    return Tensor<float>({3, out_size, out_size}, std::move(out));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Tensor<float> flip_horizontal(const Tensor<float>& img) {
    const Shape& s = img.shape();
    if (s.size() != 3) throw DataError("flip: expected [C, H, W] image");
    std::vector<float> out(img.size());
    auto d = img.data();
    const std::size_t c = s[0], h = s[1], w = s[2];
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out[(ci * h + y) * w + x] = d[(ci * h + y) * w + (w - 1 - x)];
    return Tensor<float>(s, std::move(out));
}

Tensor<float> normalize_image(const Tensor<float>& img, double mean, double stddev) {
    std::vector<float> out(img.size());
    auto d = img.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>((static_cast<double>(d[i]) - mean) / stddev);
    return Tensor<float>(img.shape(), std::move(out));
}

Tensor<float> random_resized_crop(const Tensor<float>& img, const AugmentConfig& cfg, Rng& rng) {
    const Shape& s = img.shape();
    const std::size_t h = s[1], w = s[2];
    const double area_scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double side_scale = std::sqrt(area_scale);
    const std::size_t ch = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(side_scale * static_cast<double>(h))));
    const std::size_t cw = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(side_scale * static_cast<double>(w))));
    const std::size_t top = rng.uniform_index(h - std::min(ch, h) + 1);
    const std::size_t left = rng.uniform_index(w - std::min(cw, w) + 1);
    std::vector<float> crop(3 * ch * cw);
    auto d = img.data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x)
                crop[(c * ch + y) * cw + x] = d[(c * h + top + y) * w + left + x];
    return resize_bicubic(Tensor<float>({3, ch, cw}, std::move(crop)), cfg.target_size);
}

Batch mixup_apply(const Batch& batch, float lambda, const std::vector<std::size_t>& perm) {
    const std::size_t b = batch.images.shape()[0];
    if (perm.size() != b) throw DataError("mixup: permutation size mismatch");
    const std::size_t img_elems = batch.images.size() / b;
    const std::size_t k = batch.targets.shape()[1];
    std::vector<float> images(batch.images.size());
    std::vector<float> targets(batch.targets.size());
    auto id = batch.images.data();
    auto td = batch.targets.data();
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = perm[i];
        for (std::size_t e = 0; e < img_elems; ++e)
            images[i * img_elems + e] =
                lambda * id[i * img_elems + e] + (1.0f - lambda) * id[j * img_elems + e];
        for (std::size_t e = 0; e < k; ++e)
            targets[i * k + e] = lambda * td[i * k + e] + (1.0f - lambda) * td[j * k + e];
    }
    return {Tensor<float>(batch.images.shape(), std::move(images)),
            Tensor<float>(batch.targets.shape(), std::move(targets))};
}

namespace {

Batch assemble(const std::vector<Tensor<float>>& images, const std::vector<int>& labels,
               int num_classes, std::size_t side) {
    const std::size_t b = images.size();
    const std::size_t img_elems = 3 * side * side;
    std::vector<float> im(b * img_elems);
    std::vector<float> tg(b * static_cast<std::size_t>(num_classes), 0.0f);
    for (std::size_t i = 0; i < b; ++i) {
        auto d = images[i].data();
        std::copy(d.begin(), d.end(), im.begin() + static_cast<long>(i * img_elems));
        tg[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(labels[i])] = 1.0f;
    }
    return {Tensor<float>({b, 3, side, side}, std::move(im)),
            Tensor<float>({b, static_cast<std::size_t>(num_classes)}, std::move(tg))};
}

} // namespace

Batch eval_batch(const std::vector<Tensor<float>>& images, const std::vector<int>& labels,
                 int num_classes, const AugmentConfig& cfg) {
    if (images.empty()) throw DataError("batch: empty batch");
    std::vector<Tensor<float>> processed(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        processed[i] =
            normalize_image(resize_bicubic(images[i], cfg.target_size), cfg.norm_mean, cfg.norm_std);
    return assemble(processed, labels, num_classes, cfg.target_size);
}

Batch augment(const std::vector<Tensor<float>>& images, const std::vector<int>& labels,
              int num_classes, const AugmentConfig& cfg, Rng& rng, int workers) {
    if (images.empty()) throw DataError("augment: empty batch");
    cfg.validate();
    if (!cfg.enabled) return eval_batch(images, labels, num_classes, cfg);

    std::vector<Tensor<float>> processed(images.size());
    auto process_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            Rng sample_rng = rng.fork(i); // per-sample stream: worker split invariant
            Tensor<float> img = random_resized_crop(images[i], cfg, sample_rng);
            if (sample_rng.bernoulli(cfg.flip_probability)) img = flip_horizontal(img);
            processed[i] = normalize_image(img, cfg.norm_mean, cfg.norm_std);
        }
    };
    const int nw = std::max(1, workers);
    if (nw == 1 || images.size() < 2) {
        process_range(0, images.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (images.size() + static_cast<std::size_t>(nw) - 1) /
                                  static_cast<std::size_t>(nw);
        for (int t = 0; t < nw; ++t) {
            const std::size_t lo = static_cast<std::size_t>(t) * chunk;
            const std::size_t hi = std::min(images.size(), lo + chunk);
            if (lo < hi) pool.emplace_back(process_range, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    Batch batch = assemble(processed, labels, num_classes, cfg.target_size);
    Rng mix_rng = rng.fork(0x6d697875); // batch-level stream, distinct from samples
    const float lambda = static_cast<float>(mix_rng.beta(cfg.mixup_alpha, cfg.mixup_alpha));
    const std::vector<std::size_t> perm = mix_rng.permutation(images.size());
    return mixup_apply(batch, lambda, perm);
}

} // namespace ntnt
