#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ntnt/config.hpp"
#include "ntnt/layers.hpp"
#include "ntnt/rng.hpp"

namespace ntnt {

/// Per-outer-layer record: word embeddings, sentence embeddings (class token
/// at row 0), and the layer's raw outer attention logits.
template <typename T>
struct LayerState {
    Tensor<T> gamma;                  // [B, n, m, D_w]; undefined for vit
    Tensor<T> beta;                   // [B, n+1, D]
    std::optional<Tensor<T>> z_outer; // [B, h, n+1, n+1]
};

template <typename T>
struct EmbeddingParams {
    std::optional<LinearParams<T>> word_projection;     // [3*W^2, D_w], tnt/nested
    std::optional<LinearParams<T>> sentence_projection; // [3*P^2, D], vit
    std::optional<Tensor<T>> word_pos;                  // [m, D_w], one table shared by all sentences
    Tensor<T> sentence_pos;                             // [n+1, D]
    Tensor<T> class_token;                              // [1, D]
};

template <typename T>
struct OuterLayerParams {
    std::optional<TransformerBlockParams<T>> inner; // tnt/nested
    std::optional<LinearParams<T>> aug_fc;          // [m*D_w, D], tnt/nested
    TransformerBlockParams<T> outer;
    std::optional<FusionMlpParams<T>> fusion; // nested, layers >= 2
};

template <typename T>
struct Model {
    ModelConfig config;
    EmbeddingParams<T> embed;
    std::vector<OuterLayerParams<T>> layers;
    LayerNormParams<T> final_norm;
    LinearParams<T> head; // [D, num_classes]
};

// ---------------------------------------------------------------------------
// Tokenization (data rearrangement; inputs are treated as constants)
// ---------------------------------------------------------------------------

/// [B, 3, S, S] -> [B, n, 3*P^2]; patches in row-major order, each flattened
/// channel-major (all of channel 0, then 1, then 2).
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[1] != 3)
        throw ShapeError("patchify: expected [B, 3, S, S], got " + shape_str(s));
    if (s[2] != s[3] || s[2] % patch_size != 0)
        throw ShapeError("patchify: image size " + std::to_string(s[2]) +
                         " not divisible by patch size " + std::to_string(patch_size));
    const std::size_t b = s[0], side = s[2], grid = side / patch_size, n = grid * grid;
    const std::size_t pvec = 3 * patch_size * patch_size;
    std::vector<T> out(b * n * pvec);
    auto in = image.data();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t py = 0; py < grid; ++py)
            for (std::size_t px = 0; px < grid; ++px) {
                const std::size_t patch = py * grid + px;
                T* dst = out.data() + (bi * n + patch) * pvec;
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t y = 0; y < patch_size; ++y)
                        for (std::size_t x = 0; x < patch_size; ++x)
                            *dst++ = in[((bi * 3 + c) * side + py * patch_size + y) * side +
                                        px * patch_size + x];
            }
    return Tensor<T>({b, n, pvec}, std::move(out));
}

/// [B, n, 3*P^2] -> [B, n, m, 3*W^2]; words in spatial row-major order within
/// the patch, each flattened channel-major.
template <typename T>
Tensor<T> wordify(const Tensor<T>& sentences, std::size_t word_size) {
    const Shape& s = sentences.shape();
    if (s.size() != 3 || s[2] % 3 != 0)
        throw ShapeError("wordify: expected [B, n, 3*P^2], got " + shape_str(s));
    std::size_t psq = s[2] / 3, patch = 0;
    while ((patch + 1) * (patch + 1) <= psq) ++patch;
    if (patch * patch != psq)
        throw ShapeError("wordify: last dim " + std::to_string(s[2]) + " is not 3*P^2");
    if (patch % word_size != 0)
        throw ShapeError("wordify: patch size " + std::to_string(patch) +
                         " not divisible by word size " + std::to_string(word_size));
    const std::size_t b = s[0], n = s[1], grid = patch / word_size, m = grid * grid;
    const std::size_t wvec = 3 * word_size * word_size;
    std::vector<T> out(b * n * m * wvec);
    auto in = sentences.data();
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t si = 0; si < n; ++si) {
            const T* src = in.data() + (bi * n + si) * s[2];
            for (std::size_t wy = 0; wy < grid; ++wy)
                for (std::size_t wx = 0; wx < grid; ++wx) {
                    const std::size_t word = wy * grid + wx;
                    T* dst = out.data() + (((bi * n + si) * m) + word) * wvec;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (std::size_t y = 0; y < word_size; ++y)
                            for (std::size_t x = 0; x < word_size; ++x)
                                *dst++ = src[(c * patch + wy * word_size + y) * patch +
                                             wx * word_size + x];
                }
        }
    return Tensor<T>({b, n, m, wvec}, std::move(out));
}

// ---------------------------------------------------------------------------
// Forward pipeline
// ---------------------------------------------------------------------------

/// Layer-0 state: word embeddings plus shared word positions, and sentence
/// embeddings [class_token; rows] plus sentence positions. ViT projects the
/// patches directly; tnt/nested sentence rows start at zero and are filled by
/// the first layer's word-level augmentation.
template <typename T>
LayerState<T> embed(const Tensor<T>& image, const EmbeddingParams<T>& params,
                    const ModelConfig& cfg) {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size)
        throw ShapeError("embed: image " + shape_str(s) + " does not match configured size " +
                         std::to_string(cfg.image_size));
    const std::size_t b = s[0], n = cfg.num_patches(), d = cfg.outer_dim;
    Tensor<T> sentences = patchify(image, cfg.patch_size);
    LayerState<T> state;
    Tensor<T> rows;
    if (cfg.has_inner()) {
        Tensor<T> words = wordify(sentences, cfg.word_size); // [B, n, m, 3W^2]
        state.gamma = add(linear_forward(words, *params.word_projection), *params.word_pos);
        rows = Tensor<T>::zeros({b, n, d});
    } else {
        rows = linear_forward(sentences, *params.sentence_projection);
    }
    Tensor<T> cls = add(Tensor<T>::zeros({b, 1, d}), params.class_token);
    state.beta = add(concat<T>({cls, rows}, 1), params.sentence_pos);
    return state;
}

/// Pre-norm inner transformer applied to every sentence independently:
/// Y' = Y + MSA(LN(Y)); Y = Y' + MLP(LN(Y')).
template <typename T>
Tensor<T> inner_block_forward(const Tensor<T>& gamma, const TransformerBlockParams<T>& p,
                              AttentionState<T>* state = nullptr) {
    const Shape& s = gamma.shape();
    if (s.size() != 4) throw ShapeError("inner block: expected [B, n, m, D_w], got " + shape_str(s));
    Tensor<T> x = reshape(gamma, {s[0] * s[1], s[2], s[3]});
    auto [attn_y, st] = mha_forward(layer_norm_forward(x, p.norm1), p.attn);
    Tensor<T> y1 = add(x, attn_y);
    Tensor<T> y2 = add(y1, mlp_block_forward(layer_norm_forward(y1, p.norm2), p.mlp));
    if (state) *state = st;
    return reshape(y2, s);
}

/// Adds word-level features to each sentence row: beta_i += fc(vec(gamma_i)).
/// The class-token row (index 0) is left untouched.
template <typename T>
Tensor<T> sentence_augment(const Tensor<T>& beta, const Tensor<T>& gamma,
                           const LinearParams<T>& fc) {
    const Shape& bs = beta.shape();
    const Shape& gs = gamma.shape();
    if (bs.size() != 3 || gs.size() != 4 || bs[1] != gs[1] + 1)
        throw ShapeError("sentence_augment: beta " + shape_str(bs) + " vs gamma " + shape_str(gs));
    const std::size_t n = gs[1];
    Tensor<T> cls = narrow(beta, 1, 0, 1);
    Tensor<T> rest = narrow(beta, 1, 1, n);
    Tensor<T> flat = reshape(gamma, {gs[0], n, gs[2] * gs[3]});
    Tensor<T> augmented = add(rest, linear_forward(flat, fc));
    return concat<T>({cls, augmented}, 1);
}

/// Pre-norm outer transformer block. With fusion params present the attention
/// is the nested variant fed by the previous layer's raw logits. Returns the
/// new sentence embeddings and this layer's raw logits.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> outer_block_forward(const Tensor<T>& beta,
                                                    const std::optional<Tensor<T>>& z_prev,
                                                    const TransformerBlockParams<T>& p,
                                                    const std::optional<FusionMlpParams<T>>& fusion,
                                                    AttentionState<T>* state = nullptr) {
    Tensor<T> normed = layer_norm_forward(beta, p.norm1);
    std::pair<Tensor<T>, AttentionState<T>> attn =
        fusion.has_value() ? nested_mha_forward(normed, p.attn, *fusion, z_prev)
                           : mha_forward(normed, p.attn);
    Tensor<T> b1 = add(beta, attn.first);
    Tensor<T> b2 = add(b1, mlp_block_forward(layer_norm_forward(b1, p.norm2), p.mlp));
    if (state) *state = attn.second;
    return {b2, attn.second.logits};
}

/// Every attention application of one forward pass, for auditing.
template <typename T>
struct ForwardTrace {
    std::vector<LayerState<T>> layers;
    std::vector<AttentionState<T>> inner_attention;
    std::vector<AttentionState<T>> outer_attention;
};

/// Full forward pass to classification logits [B, num_classes].
template <typename T>
Tensor<T> model_forward(const Tensor<T>& images, const Model<T>& m,
                        ForwardTrace<T>* trace = nullptr) {
    const ModelConfig& cfg = m.config;
    LayerState<T> state = embed(images, m.embed, cfg);
    std::optional<Tensor<T>> z_prev;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const OuterLayerParams<T>& lp = m.layers[l];
        if (lp.inner) {
            AttentionState<T> ist;
            state.gamma = inner_block_forward(state.gamma, *lp.inner, &ist);
            if (trace) trace->inner_attention.push_back(std::move(ist));
        }
        if (lp.aug_fc) state.beta = sentence_augment(state.beta, state.gamma, *lp.aug_fc);
        AttentionState<T> ost;
        auto [beta, z] = outer_block_forward(state.beta, z_prev, lp.outer, lp.fusion, &ost);
        state.beta = beta;
        state.z_outer = z;
        if (cfg.has_fusion()) z_prev = z;
        if (trace) {
            trace->outer_attention.push_back(std::move(ost));
            trace->layers.push_back(state);
        }
    }
    const std::size_t b = images.shape()[0];
    Tensor<T> cls = reshape(narrow(state.beta, 1, 0, 1), {b, cfg.outer_dim});
    return linear_forward(layer_norm_forward(cls, m.final_norm), m.head);
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

namespace detail {

template <typename M, typename Fn>
void visit_params_impl(M& m, Fn&& fn) {
    auto linear = [&](const std::string& prefix, auto& p) {
        fn(prefix + ".weight", p.weight);
        fn(prefix + ".bias", p.bias);
    };
    auto norm = [&](const std::string& prefix, auto& p) {
        fn(prefix + ".gamma", p.gamma);
        fn(prefix + ".beta", p.beta);
    };
    auto block = [&](const std::string& prefix, auto& p) {
        norm(prefix + ".norm1", p.norm1);
        fn(prefix + ".attn.w_q", p.attn.w_q);
        fn(prefix + ".attn.w_k", p.attn.w_k);
        fn(prefix + ".attn.w_v", p.attn.w_v);
        fn(prefix + ".attn.w_o", p.attn.w_o);
        norm(prefix + ".norm2", p.norm2);
        linear(prefix + ".mlp.fc1", p.mlp.fc1);
        linear(prefix + ".mlp.fc2", p.mlp.fc2);
    };
    if (m.embed.sentence_projection) linear("embed.patch_proj", *m.embed.sentence_projection);
    if (m.embed.word_projection) linear("embed.word_proj", *m.embed.word_projection);
    if (m.embed.word_pos) fn("embed.word_pos", *m.embed.word_pos);
    fn("embed.sentence_pos", m.embed.sentence_pos);
    fn("embed.class_token", m.embed.class_token);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i);
        auto& lp = m.layers[i];
        if (lp.inner) block(p + ".inner", *lp.inner);
        if (lp.aug_fc) linear(p + ".aug_fc", *lp.aug_fc);
        block(p + ".outer", lp.outer);
        if (lp.fusion) {
            fn(p + ".fusion.w1", lp.fusion->w1);
            fn(p + ".fusion.b1", lp.fusion->b1);
            fn(p + ".fusion.w2", lp.fusion->w2);
            fn(p + ".fusion.b2", lp.fusion->b2);
        }
    }
    norm("final_norm", m.final_norm);
    linear("head", m.head);
}

} // namespace detail

template <typename T, typename Fn>
void visit_params(Model<T>& m, Fn&& fn) {
    detail::visit_params_impl(m, std::forward<Fn>(fn));
}

template <typename T, typename Fn>
void visit_params(const Model<T>& m, Fn&& fn) {
    detail::visit_params_impl(m, std::forward<Fn>(fn));
}

/// Exact number of scalar parameters.
template <typename T>
std::size_t count_params(const Model<T>& m) {
    std::size_t total = 0;
    visit_params(m, [&](const std::string&, const Tensor<T>& t) { total += t.size(); });
    return total;
}

template <typename T>
void assign_param(Model<T>& m, const std::string& name, const Tensor<T>& value) {
    bool found = false;
    visit_params(m, [&](const std::string& n, Tensor<T>& t) {
        if (n != name) return;
        if (t.shape() != value.shape())
            throw ShapeError("assign_param: shape " + shape_str(value.shape()) +
                             " does not match " + name + " " + shape_str(t.shape()));
        t = value.requires_grad() ? value : value.with_grad();
        found = true;
    });
    if (!found) throw ConfigError("assign_param: no parameter named " + name);
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

enum class InitKind { trunc_normal, zeros, ones };

template <typename T>
Tensor<T> init_param(std::uint64_t seed, const std::string& name, Shape shape, InitKind kind) {
    std::vector<T> data(numel(shape), T(0));
    if (kind == InitKind::trunc_normal) {
        Rng rng = Rng::for_name(seed, name);
        for (auto& v : data) v = static_cast<T>(rng.truncated_normal(0.02));
    } else if (kind == InitKind::ones) {
        std::fill(data.begin(), data.end(), T(1));
    }
    return Tensor<T>(std::move(shape), std::move(data), /*requires_grad=*/true);
}

template <typename T>
struct ParamBuilder {
    std::uint64_t seed;

    Tensor<T> weight(const std::string& name, Shape shape) {
        return init_param<T>(seed, name, std::move(shape), InitKind::trunc_normal);
    }
    Tensor<T> zeros(const std::string& name, Shape shape) {
        return init_param<T>(seed, name, std::move(shape), InitKind::zeros);
    }
    Tensor<T> ones(const std::string& name, Shape shape) {
        return init_param<T>(seed, name, std::move(shape), InitKind::ones);
    }
    LinearParams<T> linear(const std::string& prefix, std::size_t d_in, std::size_t d_out) {
        return {weight(prefix + ".weight", {d_in, d_out}), zeros(prefix + ".bias", {d_out})};
    }
    LayerNormParams<T> norm(const std::string& prefix, std::size_t d) {
        return {ones(prefix + ".gamma", {d}), zeros(prefix + ".beta", {d})};
    }
    MhaParams<T> mha(const std::string& prefix, std::size_t d, std::size_t heads) {
        MhaParams<T> p;
        p.w_q = weight(prefix + ".w_q", {d, d});
        p.w_k = weight(prefix + ".w_k", {d, d});
        p.w_v = weight(prefix + ".w_v", {d, d});
        p.w_o = weight(prefix + ".w_o", {d, d});
        p.num_heads = heads;
        p.head_dim = d / heads;
        return p;
    }
    TransformerBlockParams<T> block(const std::string& prefix, std::size_t d, std::size_t heads,
                                    std::size_t ratio) {
        TransformerBlockParams<T> p;
        p.norm1 = norm(prefix + ".norm1", d);
        p.attn = mha(prefix + ".attn", d, heads);
        p.norm2 = norm(prefix + ".norm2", d);
        p.mlp.fc1 = linear(prefix + ".mlp.fc1", d, d * ratio);
        p.mlp.fc2 = linear(prefix + ".mlp.fc2", d * ratio, d);
        p.mlp.ratio = ratio;
        return p;
    }
};

} // namespace detail

/// Deterministic construction: each parameter draws from an RNG stream keyed
/// by (seed, parameter name), so models sharing a name prefix (tnt vs
/// nested_tnt) share bit-identical common weights. Fusion output layers start
/// at exactly zero.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    detail::ParamBuilder<T> b{seed};
    Model<T> m;
    m.config = cfg;
    const std::size_t n = cfg.num_patches(), d = cfg.outer_dim;
    if (cfg.has_inner()) {
        const std::size_t m_words = cfg.num_words(), dw = cfg.inner_dim;
        m.embed.word_projection =
            b.linear("embed.word_proj", 3 * cfg.word_size * cfg.word_size, dw);
        m.embed.word_pos = b.weight("embed.word_pos", {m_words, dw});
    } else {
        m.embed.sentence_projection =
            b.linear("embed.patch_proj", 3 * cfg.patch_size * cfg.patch_size, d);
    }
    m.embed.sentence_pos = b.weight("embed.sentence_pos", {n + 1, d});
    m.embed.class_token = b.weight("embed.class_token", {1, d});
    m.layers.resize(cfg.depth);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string prefix = "layers." + std::to_string(l);
        OuterLayerParams<T>& lp = m.layers[l];
        if (cfg.has_inner()) {
            lp.inner = b.block(prefix + ".inner", cfg.inner_dim, cfg.inner_heads, cfg.mlp_ratio);
            lp.aug_fc = b.linear(prefix + ".aug_fc", cfg.num_words() * cfg.inner_dim, d);
        }
        lp.outer = b.block(prefix + ".outer", d, cfg.outer_heads, cfg.mlp_ratio);
        if (cfg.has_fusion() && l >= 1) {
            FusionMlpParams<T> f;
            const std::size_t h = cfg.outer_heads, r = cfg.fusion_width();
            f.w1 = b.weight(prefix + ".fusion.w1", {2 * h, r});
            f.b1 = b.zeros(prefix + ".fusion.b1", {r});
            f.w2 = b.zeros(prefix + ".fusion.w2", {r, h});
            f.b2 = b.zeros(prefix + ".fusion.b2", {h});
            f.hidden = r;
            lp.fusion = std::move(f);
        }
    }
    m.final_norm = b.norm("final_norm", d);
    m.head = b.linear("head", d, cfg.num_classes);
    return m;
}

} // namespace ntnt
