#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "ntnt/model.hpp"
#include "ntnt/tensor.hpp"

namespace ntnt {

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued f, always in 64-bit precision. The finite-difference
/// side never touches the tape, so the two routes stay independent.
template <typename F>
double grad_check(F&& f, const Tensor<double>& x, double h = 1e-5) {
    Tensor<double> probe = x.with_grad();
    Tensor<double> analytic;
    {
        GradientTape<double> tape;
        Tensor<double> loss = f(probe);
        if (loss.size() != 1)
            throw ShapeError("grad_check: function must be scalar-valued, got " +
                             shape_str(loss.shape()));
        tape.backward(loss);
        analytic = tape.grad(probe);
    }
    std::vector<double> base(x.data().begin(), x.data().end());
    auto eval = [&](std::size_t i, double delta) {
        std::vector<double> v = base;
        v[i] += delta;
        return f(Tensor<double>(x.shape(), std::move(v))).item();
    };
    double max_err = 0.0;
    auto ad = analytic.data();
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double fd = (eval(i, h) - eval(i, -h)) / (2.0 * h);
        const double err = std::fabs(ad[i] - fd) / std::max(1.0, std::fabs(ad[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t params_checked = 0;
};

/// Re-randomizes the fusion output layers of a freshly built model. They are
/// zero at init, which would silence the cross-layer logit path; the
/// end-to-end gradient check needs that path to carry signal.
template <typename T>
void randomize_fusion_outputs(Model<T>& m, std::uint64_t seed) {
    visit_params(m, [&](const std::string& name, Tensor<T>& t) {
        if (name.ends_with(".fusion.w2") || name.ends_with(".fusion.b2")) {
            Rng rng = Rng::for_name(seed, name + "#gradcheck");
            std::vector<T> data(t.size());
            for (auto& v : data) v = static_cast<T>(rng.truncated_normal(0.05));
            t = Tensor<T>(t.shape(), std::move(data), true);
        }
    });
}

/// End-to-end finite-difference sweep over every parameter tensor of a model
/// built from `cfg`, against a softmax cross-entropy loss on a random batch.
/// `loss_fn(model, images)` must return a scalar tensor.
template <typename LossFn>
GradCheckReport model_grad_check(const ModelConfig& cfg, std::uint64_t seed, std::size_t batch,
                                 LossFn&& loss_fn, double h = 1e-5) {
    Model<double> model = build_model<double>(cfg, seed);
    randomize_fusion_outputs(model, seed);

    Rng rng = Rng::for_name(seed, "gradcheck.images");
    std::vector<double> pixels(batch * 3 * cfg.image_size * cfg.image_size);
    for (auto& p : pixels) p = rng.uniform();
    Tensor<double> images({batch, 3, cfg.image_size, cfg.image_size}, std::move(pixels));

    GradCheckReport report;
    std::vector<std::string> names;
    visit_params(model, [&](const std::string& name, const Tensor<double>&) {
        names.push_back(name);
    });
    for (const std::string& name : names) {
        Tensor<double> original;
        visit_params(model, [&](const std::string& n, const Tensor<double>& t) {
            if (n == name) original = t;
        });
        auto f = [&](const Tensor<double>& probe) {
            Model<double> candidate = model;
            assign_param(candidate, name, probe);
            return loss_fn(candidate, images);
        };
        const double err = grad_check(f, original, h);
        if (err > report.max_rel_err) {
            report.max_rel_err = err;
            report.worst_param = name;
        }
        ++report.params_checked;
    }
    return report;
}

} // namespace ntnt
