#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ntnt/errors.hpp"

namespace ntnt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

inline Shape strides_of(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    int r = static_cast<int>(rank);
    if (axis < -r || axis >= r)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " invalid for rank " + std::to_string(rank));
    return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

/// Dense row-major n-dimensional array with value semantics. The payload is
/// shared and immutable after construction; copies are cheap. Each tensor
/// carries a unique id so a gradient tape can identify values even when
/// several tensors alias the same storage (reshape).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : shape_(std::move(shape)),
          data_(std::make_shared<const std::vector<T>>(std::move(data))),
          requires_grad_(requires_grad),
          uid_(next_uid()) {
        if (numel(shape_) != data_->size())
            throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                             std::to_string(data_->size()));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        std::size_t n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    static Tensor from(Shape shape, std::initializer_list<T> values, bool requires_grad = false) {
        return Tensor(std::move(shape), std::vector<T>(values), requires_grad);
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    std::span<const T> data() const { return {data_->data(), data_->size()}; }
    std::uint64_t uid() const { return uid_; }
    bool requires_grad() const { return requires_grad_; }

    /// Same storage, new identity, requires_grad set.
    Tensor with_grad() const {
        Tensor t = *this;
        t.requires_grad_ = true;
        t.uid_ = next_uid();
        return t;
    }

    /// Same storage, new identity, gradient tracking off.
    Tensor detached() const {
        Tensor t = *this;
        t.requires_grad_ = false;
        t.uid_ = next_uid();
        return t;
    }

    T item() const {
        if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape_) + " is not a scalar");
        return (*data_)[0];
    }

    T at(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw ShapeError("at: rank mismatch for " + shape_str(shape_));
        Shape st = strides_of(shape_);
        std::size_t off = 0, d = 0;
        for (std::size_t i : idx) off += i * st[d++];
        return (*data_)[off];
    }

    /// Storage shared with this tensor but viewed under a different shape.
    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size())
            throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        Tensor t = *this;
        t.shape_ = std::move(shape);
        t.uid_ = next_uid();
        return t;
    }

private:
    static std::uint64_t next_uid() {
        static std::atomic<std::uint64_t> counter{0};
        return ++counter;
    }

    Shape shape_;
    std::shared_ptr<const std::vector<T>> data_;
    bool requires_grad_ = false;
    std::uint64_t uid_ = 0;
};

template <typename To, typename From>
Tensor<To> convert(const Tensor<From>& t) {
    std::vector<To> out(t.size());
    auto src = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(src[i]);
    return Tensor<To>(t.shape(), std::move(out), t.requires_grad());
}

/// Reverse-mode tape. Constructing one makes it the active tape for the
/// current thread; operations record nodes while it is active and some input
/// is tracked. One forward pass, one backward(), then discard.
template <typename T>
class GradientTape {
public:
    using BackwardFn =
        std::function<void(const std::vector<T>&, const std::vector<int>&, GradientTape&)>;

    GradientTape() { stack().push_back(this); }
    ~GradientTape() { stack().pop_back(); }
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    static GradientTape* active() { return stack().empty() ? nullptr : stack().back(); }

    /// Node id for a tensor: existing node, a fresh leaf if it requires grad,
    /// or -1 when the tensor is a constant from the tape's point of view.
    int track(const Tensor<T>& t) {
        auto it = index_.find(t.uid());
        if (it != index_.end()) return it->second;
        if (!t.requires_grad()) return -1;
        return add_node(t, {}, nullptr);
    }

    void record(const Tensor<T>& result, std::vector<int> inputs, BackwardFn fn) {
        add_node(result, std::move(inputs), std::move(fn));
    }

    void backward(const Tensor<T>& loss) {
        auto it = index_.find(loss.uid());
        if (it == index_.end()) throw TapeError("backward: loss tensor is not on this tape");
        if (loss.size() != 1)
            throw TapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
        grads_.assign(nodes_.size(), {});
        grads_[static_cast<std::size_t>(it->second)] = {T(1)};
        for (int i = it->second; i >= 0; --i) {
            auto& node = nodes_[static_cast<std::size_t>(i)];
            if (grads_[static_cast<std::size_t>(i)].empty() || !node.backward) continue;
            node.backward(grads_[static_cast<std::size_t>(i)], node.inputs, *this);
        }
    }

    void accumulate(int node_id, std::vector<T> g) {
        if (node_id < 0) return;
        auto& buf = grads_[static_cast<std::size_t>(node_id)];
        if (buf.empty()) {
            buf = std::move(g);
            return;
        }
        if (buf.size() != g.size()) throw TapeError("accumulate: gradient size mismatch");
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }

    bool has_grad(const Tensor<T>& t) const {
        auto it = index_.find(t.uid());
        return it != index_.end() && !grads_.empty() &&
               !grads_[static_cast<std::size_t>(it->second)].empty();
    }

    Tensor<T> grad(const Tensor<T>& t) const {
        auto it = index_.find(t.uid());
        if (it == index_.end()) throw TapeError("grad: tensor is not tracked on this tape");
        const auto& buf = grads_[static_cast<std::size_t>(it->second)];
        if (buf.empty()) return Tensor<T>::zeros(t.shape());
        return Tensor<T>(t.shape(), buf);
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> inputs;
        BackwardFn backward;
    };

    int add_node(const Tensor<T>& t, std::vector<int> inputs, BackwardFn fn) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{std::move(inputs), std::move(fn)});
        index_[t.uid()] = id;
        return id;
    }

    static std::vector<GradientTape*>& stack() {
        static thread_local std::vector<GradientTape*> s;
        return s;
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::uint64_t, int> index_;
    std::vector<std::vector<T>> grads_;
};

namespace detail {

/// Gathers tape bookkeeping for an op's inputs; records only when the tape is
/// live and at least one input is tracked.
template <typename T>
struct Recorder {
    GradientTape<T>* tape = nullptr;
    std::vector<int> ids;
    bool any = false;

    explicit Recorder(std::initializer_list<const Tensor<T>*> inputs) {
        tape = GradientTape<T>::active();
        if (!tape) return;
        ids.reserve(inputs.size());
        for (const Tensor<T>* t : inputs) {
            int id = tape->track(*t);
            ids.push_back(id);
            any = any || id >= 0;
        }
    }

    explicit Recorder(const std::vector<const Tensor<T>*>& inputs) {
        tape = GradientTape<T>::active();
        if (!tape) return;
        ids.reserve(inputs.size());
        for (const Tensor<T>* t : inputs) {
            int id = tape->track(*t);
            ids.push_back(id);
            any = any || id >= 0;
        }
    }

    void record(const Tensor<T>& result, typename GradientTape<T>::BackwardFn fn) {
        if (tape && any) tape->record(result, std::move(ids), std::move(fn));
    }
};

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const EMat<T>>;
template <typename T>
using MutMap = Eigen::Map<EMat<T>>;

/// Slice offset into a tensor whose batch dims may be broadcast (size 1)
/// relative to the output batch shape. Both shapes have equal rank.
inline std::size_t broadcast_slice(std::size_t flat, const Shape& out_batch, const Shape& in_batch) {
    std::size_t off = 0, stride = 1;
    for (std::size_t i = out_batch.size(); i-- > 0;) {
        std::size_t idx = flat % out_batch[i];
        flat /= out_batch[i];
        if (in_batch[i] != 1) off += idx * stride;
        stride *= in_batch[i];
    }
    return off;
}

struct MatmulPlan {
    Shape out_shape;
    Shape out_batch;
    Shape a_batch;
    Shape b_batch;
    std::size_t batches;
    std::size_t m, k, n;
};

inline MatmulPlan matmul_plan(const Shape& a, const Shape& b) {
    if (a.size() < 2 || b.size() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a) + " x " +
                         shape_str(b));
    MatmulPlan p;
    p.m = a[a.size() - 2];
    p.k = a[a.size() - 1];
    p.n = b[b.size() - 1];
    if (b[b.size() - 2] != p.k)
        throw ShapeError("matmul: shapes do not conform: " + shape_str(a) + " x " + shape_str(b));
    std::size_t nb = std::max(a.size(), b.size()) - 2;
    p.a_batch.assign(nb, 1);
    p.b_batch.assign(nb, 1);
    for (std::size_t i = 0; i + 2 < a.size(); ++i) p.a_batch[nb - (a.size() - 2) + i] = a[i];
    for (std::size_t i = 0; i + 2 < b.size(); ++i) p.b_batch[nb - (b.size() - 2) + i] = b[i];
    p.out_batch.assign(nb, 1);
    for (std::size_t i = 0; i < nb; ++i) {
        std::size_t da = p.a_batch[i], db = p.b_batch[i];
        if (da == db || db == 1)
            p.out_batch[i] = da;
        else if (da == 1)
            p.out_batch[i] = db;
        else
            throw ShapeError("matmul: batch dimensions do not broadcast: " + shape_str(a) + " x " +
                             shape_str(b));
    }
    p.batches = numel(p.out_batch);
    p.out_shape = p.out_batch;
    p.out_shape.push_back(p.m);
    p.out_shape.push_back(p.n);
    return p;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Operations. Each returns a fresh tensor and, when a tape is active and an
// input is tracked, records the exact reverse-mode rule.
// ---------------------------------------------------------------------------

/// Batched matrix product a[..., M, K] x b[..., K, N]. Leading batch dims must
/// match or broadcast from size 1 (missing dims count as 1).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::MatmulPlan p = detail::matmul_plan(a.shape(), b.shape());
    const std::size_t mk = p.m * p.k, kn = p.k * p.n, mn = p.m * p.n;
    std::vector<T> out(p.batches * mn);
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    for (std::size_t s = 0; s < p.batches; ++s) {
        std::size_t ao = detail::broadcast_slice(s, p.out_batch, p.a_batch);
        std::size_t bo = detail::broadcast_slice(s, p.out_batch, p.b_batch);
        detail::ConstMap<T> A(ap + ao * mk, static_cast<Eigen::Index>(p.m),
                              static_cast<Eigen::Index>(p.k));
        detail::ConstMap<T> B(bp + bo * kn, static_cast<Eigen::Index>(p.k),
                              static_cast<Eigen::Index>(p.n));
        detail::MutMap<T> C(out.data() + s * mn, static_cast<Eigen::Index>(p.m),
                            static_cast<Eigen::Index>(p.n));
        C.noalias() = A * B;
    }
    Tensor<T> result(p.out_shape, std::move(out), a.requires_grad() || b.requires_grad());

    detail::Recorder<T> rec({&a, &b});
    rec.record(result, [a, b, p, mk, kn, mn](const std::vector<T>& g, const std::vector<int>& in,
                                             GradientTape<T>& tape) {
        const T* ap = a.data().data();
        const T* bp = b.data().data();
        if (in[0] >= 0) {
            std::vector<T> da(a.size(), T(0));
            for (std::size_t s = 0; s < p.batches; ++s) {
                std::size_t ao = detail::broadcast_slice(s, p.out_batch, p.a_batch);
                std::size_t bo = detail::broadcast_slice(s, p.out_batch, p.b_batch);
                detail::ConstMap<T> G(g.data() + s * mn, static_cast<Eigen::Index>(p.m),
                                      static_cast<Eigen::Index>(p.n));
                detail::ConstMap<T> B(bp + bo * kn, static_cast<Eigen::Index>(p.k),
                                      static_cast<Eigen::Index>(p.n));
                detail::MutMap<T> DA(da.data() + ao * mk, static_cast<Eigen::Index>(p.m),
                                     static_cast<Eigen::Index>(p.k));
                DA.noalias() += G * B.transpose();
            }
            tape.accumulate(in[0], std::move(da));
        }
        if (in[1] >= 0) {
            std::vector<T> db(b.size(), T(0));
            for (std::size_t s = 0; s < p.batches; ++s) {
                std::size_t ao = detail::broadcast_slice(s, p.out_batch, p.a_batch);
                std::size_t bo = detail::broadcast_slice(s, p.out_batch, p.b_batch);
                detail::ConstMap<T> G(g.data() + s * mn, static_cast<Eigen::Index>(p.m),
                                      static_cast<Eigen::Index>(p.n));
                detail::ConstMap<T> A(ap + ao * mk, static_cast<Eigen::Index>(p.m),
                                      static_cast<Eigen::Index>(p.k));
                detail::MutMap<T> DB(db.data() + bo * kn, static_cast<Eigen::Index>(p.k),
                                     static_cast<Eigen::Index>(p.n));
                DB.noalias() += A.transpose() * G;
            }
            tape.accumulate(in[1], std::move(db));
        }
    });
    return result;
}

/// Elementwise sum. `b` must have the same shape as `a` or a shape that is a
/// trailing suffix of it (broadcast over the leading dims, e.g. bias add).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    bool suffix = bs.size() <= as.size() &&
                  std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size()));
    if (!suffix)
        throw ShapeError("add: shape " + shape_str(bs) + " is not a suffix of " + shape_str(as));
    const std::size_t bn = b.size();
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i % bn];
    Tensor<T> result(as, std::move(out), a.requires_grad() || b.requires_grad());

    detail::Recorder<T> rec({&a, &b});
    rec.record(result,
               [bn](const std::vector<T>& g, const std::vector<int>& in, GradientTape<T>& tape) {
                   if (in[0] >= 0) tape.accumulate(in[0], g);
                   if (in[1] >= 0) {
                       std::vector<T> db(bn, T(0));
                       for (std::size_t i = 0; i < g.size(); ++i) db[i % bn] += g[i];
                       tape.accumulate(in[1], std::move(db));
                   }
               });
    return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    Tensor<T> result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());

    detail::Recorder<T> rec({&a, &b});
    rec.record(result, [](const std::vector<T>& g, const std::vector<int>& in,
                          GradientTape<T>& tape) {
        if (in[0] >= 0) tape.accumulate(in[0], g);
        if (in[1] >= 0) {
            std::vector<T> db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = -g[i];
            tape.accumulate(in[1], std::move(db));
        }
    });
    return result;
}

/// Elementwise product; shapes must match exactly.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    Tensor<T> result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());

    detail::Recorder<T> rec({&a, &b});
    rec.record(result, [a, b](const std::vector<T>& g, const std::vector<int>& in,
                              GradientTape<T>& tape) {
        if (in[0] >= 0) {
            std::vector<T> da(g.size());
            auto bd = b.data();
            for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bd[i];
            tape.accumulate(in[0], std::move(da));
        }
        if (in[1] >= 0) {
            std::vector<T> db(g.size());
            auto ad = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * ad[i];
            tape.accumulate(in[1], std::move(db));
        }
    });
    return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
    Tensor<T> result(x.shape(), std::move(out), x.requires_grad());

    detail::Recorder<T> rec({&x});
    rec.record(result, [factor](const std::vector<T>& g, const std::vector<int>& in,
                                GradientTape<T>& tape) {
        std::vector<T> dx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * factor;
        tape.accumulate(in[0], std::move(dx));
    });
    return result;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

/// Numerically stable softmax along `axis` (max subtraction).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1, len = s[ax];
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < inner; ++k) {
            const std::size_t base = o * len * inner + k;
            T mx = xd[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                T e = std::exp(xd[base + j * inner] - mx);
                out[base + j * inner] = e;
                sum += static_cast<double>(e);
            }
            const T inv = static_cast<T>(1.0 / sum);
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
        }
    }
    Tensor<T> result(s, std::move(out), x.requires_grad());

    detail::Recorder<T> rec({&x});
    rec.record(result, [result, outer, inner, len](const std::vector<T>& g,
                                                   const std::vector<int>& in,
                                                   GradientTape<T>& tape) {
        // dx = s * (g - sum(g * s, axis))
        std::vector<T> dx(g.size());
        auto sd = result.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t base = o * len * inner + k;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    std::size_t idx = base + j * inner;
                    dot += static_cast<double>(g[idx]) * static_cast<double>(sd[idx]);
                }
                for (std::size_t j = 0; j < len; ++j) {
                    std::size_t idx = base + j * inner;
                    dx[idx] = sd[idx] * (g[idx] - static_cast<T>(dot));
                }
            }
        }
        tape.accumulate(in[0], std::move(dx));
    });
    return result;
}

/// log(softmax(x)) along `axis`, computed stably.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
    std::size_t ax = normalize_axis(axis, x.rank(), "log_softmax");
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1, len = s[ax];
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < inner; ++k) {
            const std::size_t base = o * len * inner + k;
            T mx = xd[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < len; ++j)
                sum += std::exp(static_cast<double>(xd[base + j * inner] - mx));
            const T lse = mx + static_cast<T>(std::log(sum));
            for (std::size_t j = 0; j < len; ++j)
                out[base + j * inner] = xd[base + j * inner] - lse;
        }
    }
    Tensor<T> result(s, std::move(out), x.requires_grad());

    detail::Recorder<T> rec({&x});
    rec.record(result, [result, outer, inner, len](const std::vector<T>& g,
                                                   const std::vector<int>& in,
                                                   GradientTape<T>& tape) {
        // dx = g - softmax(x) * sum(g, axis)
        std::vector<T> dx(g.size());
        auto ld = result.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < inner; ++k) {
                const std::size_t base = o * len * inner + k;
                double gsum = 0.0;
                for (std::size_t j = 0; j < len; ++j) gsum += static_cast<double>(g[base + j * inner]);
                for (std::size_t j = 0; j < len; ++j) {
                    std::size_t idx = base + j * inner;
                    dx[idx] = g[idx] - static_cast<T>(std::exp(static_cast<double>(ld[idx])) * gsum);
                }
            }
        }
        tape.accumulate(in[0], std::move(dx));
    });
    return result;
}

/// Layer normalization over the last axis with affine transform. Population
/// (biased) variance, as is conventional for transformer stacks.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6)) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw ShapeError("layer_norm: affine params must have shape [" + std::to_string(d) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::size_t rows = x.size() / d;
    std::vector<T> out(x.size());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(rows);
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += static_cast<double>(xd[base + j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = static_cast<double>(xd[base + j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[r] = static_cast<T>(inv);
        for (std::size_t j = 0; j < d; ++j) {
            T h = static_cast<T>((static_cast<double>(xd[base + j]) - mean) * inv);
            xhat[base + j] = h;
            out[base + j] = gd[j] * h + bd[j];
        }
    }
    bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor<T> result(x.shape(), std::move(out), rg);

    detail::Recorder<T> rec({&x, &gamma, &beta});
    auto xhat_p = std::make_shared<std::vector<T>>(std::move(xhat));
    auto inv_p = std::make_shared<std::vector<T>>(std::move(inv_std));
    rec.record(result, [gamma, rows, d, xhat_p, inv_p](const std::vector<T>& g,
                                                       const std::vector<int>& in,
                                                       GradientTape<T>& tape) {
        const auto& xh = *xhat_p;
        const auto& inv = *inv_p;
        auto gd = gamma.data();
        if (in[0] >= 0) {
            std::vector<T> dx(g.size());
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t base = r * d;
                double m1 = 0.0, m2 = 0.0; // mean(g*gamma), mean(g*gamma*xhat)
                for (std::size_t j = 0; j < d; ++j) {
                    double gg = static_cast<double>(g[base + j]) * static_cast<double>(gd[j]);
                    m1 += gg;
                    m2 += gg * static_cast<double>(xh[base + j]);
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    double gg = static_cast<double>(g[base + j]) * static_cast<double>(gd[j]);
                    dx[base + j] = static_cast<T>(
                        static_cast<double>(inv[r]) *
                        (gg - m1 - static_cast<double>(xh[base + j]) * m2));
                }
            }
            tape.accumulate(in[0], std::move(dx));
        }
        if (in[1] >= 0) {
            std::vector<T> dgamma(d, T(0));
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) dgamma[j] += g[r * d + j] * xh[r * d + j];
            tape.accumulate(in[1], std::move(dgamma));
        }
        if (in[2] >= 0) {
            std::vector<T> dbeta(d, T(0));
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) dbeta[j] += g[r * d + j];
            tape.accumulate(in[2], std::move(dbeta));
        }
    });
    return result;
}

/// Exact Gaussian error linear unit x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = static_cast<double>(xd[i]);
        out[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2)));
    }
    Tensor<T> result(x.shape(), std::move(out), x.requires_grad());

    detail::Recorder<T> rec({&x});
    rec.record(result, [x](const std::vector<T>& g, const std::vector<int>& in,
                           GradientTape<T>& tape) {
        std::vector<T> dx(g.size());
        auto xd = x.data();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            double v = static_cast<double>(xd[i]);
            double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] = static_cast<T>(static_cast<double>(g[i]) * (phi + v * pdf));
        }
        tape.accumulate(in[0], std::move(dx));
    });
    return result;
}

/// Concatenate tensors along `axis`; all other dims must match.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts given");
    std::size_t ax = normalize_axis(axis, parts[0].rank(), "concat");
    const Shape& s0 = parts[0].shape();
    std::size_t total_len = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size())
            throw ShapeError("concat: rank mismatch: " + shape_str(s0) + " vs " +
                             shape_str(p.shape()));
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != ax && p.shape()[i] != s0[i])
                throw ShapeError("concat: shape mismatch off the concat axis: " + shape_str(s0) +
                                 " vs " + shape_str(p.shape()));
        total_len += p.shape()[ax];
    }
    Shape out_shape = s0;
    out_shape[ax] = total_len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
    for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
    std::vector<T> out(numel(out_shape));
    std::size_t offset_len = 0;
    for (const auto& p : parts) {
        const std::size_t plen = p.shape()[ax];
        auto pd = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pd.data() + o * plen * inner, plen * inner,
                        out.data() + (o * total_len + offset_len) * inner);
        }
        offset_len += plen;
    }
    bool rg = false;
    for (const auto& p : parts) rg = rg || p.requires_grad();
    Tensor<T> result(out_shape, std::move(out), rg);

    std::vector<const Tensor<T>*> ptrs;
    ptrs.reserve(parts.size());
    for (const auto& p : parts) ptrs.push_back(&p);
    detail::Recorder<T> rec(ptrs);
    std::vector<std::size_t> lens;
    lens.reserve(parts.size());
    for (const auto& p : parts) lens.push_back(p.shape()[ax]);
    rec.record(result, [lens, outer, inner, total_len](const std::vector<T>& g,
                                                       const std::vector<int>& in,
                                                       GradientTape<T>& tape) {
        std::size_t offset_len = 0;
        for (std::size_t pi = 0; pi < lens.size(); ++pi) {
            const std::size_t plen = lens[pi];
            if (in[pi] >= 0) {
                std::vector<T> dp(outer * plen * inner);
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(g.data() + (o * total_len + offset_len) * inner, plen * inner,
                                dp.data() + o * plen * inner);
                tape.accumulate(in[pi], std::move(dp));
            }
            offset_len += plen;
        }
    });
    return result;
}

/// Contiguous slice of length `len` starting at `start` along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::size_t start, std::size_t len) {
    std::size_t ax = normalize_axis(axis, x.rank(), "narrow");
    const Shape& s = x.shape();
    if (start + len > s[ax])
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds axis length " +
                         std::to_string(s[ax]));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape[ax] = len;
    std::vector<T> out(outer * len * inner);
    auto xd = x.data();
    const std::size_t full = s[ax];
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xd.data() + (o * full + start) * inner, len * inner,
                    out.data() + o * len * inner);
    Tensor<T> result(out_shape, std::move(out), x.requires_grad());

    detail::Recorder<T> rec({&x});
    rec.record(result, [outer, inner, full, start, len, n = x.size()](
                           const std::vector<T>& g, const std::vector<int>& in,
                           GradientTape<T>& tape) {
        std::vector<T> dx(n, T(0));
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(g.data() + o * len * inner, len * inner,
                        dx.data() + (o * full + start) * inner);
        tape.accumulate(in[0], std::move(dx));
    });
    return result;
}

/// View with a new shape (row-major data order preserved).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    Tensor<T> result = x.reshaped(std::move(shape));
    detail::Recorder<T> rec({&x});
    rec.record(result, [](const std::vector<T>& g, const std::vector<int>& in,
                          GradientTape<T>& tape) { tape.accumulate(in[0], g); });
    return result;
}

/// Row-major flattening to rank 1.
template <typename T>
Tensor<T> vectorize(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("vectorize: input must have rank >= 1");
    return reshape(x, Shape{x.size()});
}

/// Reorder axes: out dim i is input dim perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& s = x.shape();
    const std::size_t r = s.size();
    std::vector<bool> seen(r, false);
    if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch for " + shape_str(s));
    for (std::size_t p : perm) {
        if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation for " + shape_str(s));
        seen[p] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
    Shape in_strides = strides_of(s);
    std::vector<std::size_t> map_strides(r);
    for (std::size_t i = 0; i < r; ++i) map_strides[i] = in_strides[perm[i]];

    std::vector<T> out(x.size());
    auto xd = x.data();
    std::vector<std::size_t> idx(r, 0);
    std::size_t in_off = 0;
    const std::size_t total = x.size();
    for (std::size_t o = 0; o < total; ++o) {
        out[o] = xd[in_off];
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            in_off += map_strides[d];
            if (idx[d] < out_shape[d]) break;
            in_off -= idx[d] * map_strides[d];
            idx[d] = 0;
        }
    }
    Tensor<T> result(out_shape, std::move(out), x.requires_grad());

    detail::Recorder<T> rec({&x});
    std::vector<std::size_t> inv(r);
    for (std::size_t i = 0; i < r; ++i) inv[perm[i]] = i;
    rec.record(result, [inv, out_shape](const std::vector<T>& g, const std::vector<int>& in,
                                        GradientTape<T>& tape) {
        // Permute the gradient back with the inverse permutation (no tape).
        const std::size_t r = inv.size();
        Shape gs_strides = strides_of(out_shape);
        std::vector<std::size_t> map_strides(r);
        Shape in_shape(r);
        for (std::size_t i = 0; i < r; ++i) {
            in_shape[i] = out_shape[inv[i]];
            map_strides[i] = gs_strides[inv[i]];
        }
        std::vector<T> dx(g.size());
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t o = 0; o < dx.size(); ++o) {
            dx[o] = g[off];
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                off += map_strides[d];
                if (idx[d] < in_shape[d]) break;
                off -= idx[d] * map_strides[d];
                idx[d] = 0;
            }
        }
        tape.accumulate(in[0], std::move(dx));
    });
    return result;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("transpose: input must have rank >= 2");
    std::vector<std::size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
    return permute(x, perm);
}

/// Sum of all elements, returned as a scalar tensor of shape [1].
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    double s = 0.0;
    for (T v : x.data()) s += static_cast<double>(v);
    Tensor<T> result({1}, {static_cast<T>(s)}, x.requires_grad());

    detail::Recorder<T> rec({&x});
    rec.record(result, [n = x.size()](const std::vector<T>& g, const std::vector<int>& in,
                                      GradientTape<T>& tape) {
        tape.accumulate(in[0], std::vector<T>(n, g[0]));
    });
    return result;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), static_cast<T>(1.0 / static_cast<double>(x.size())));
}

} // namespace ntnt
