#pragma once

// Dense row-major tensors with reverse-mode differentiation on a per-step
// tape. Scalar type is a template parameter: float for training/sampling,
// double for gradient-check mode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace pixelgen {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from_data(std::move(shape), {}, true);
    }
    static Tensor full(Shape shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.n_->value.begin(), t.n_->value.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return full({1}, v); }
    static Tensor from_data(Shape shape, std::vector<T> data, bool allow_empty = false) {
        auto n = std::make_shared<TensorNode<T>>();
        int64_t count = shape_numel(shape);
        for (int64_t d : shape)
            if (d <= 0) fail(ErrorCode::dimension, "tensor: nonpositive dimension in " + shape_str(shape));
        if (allow_empty && data.empty()) data.assign(static_cast<size_t>(count), T(0));
        if (static_cast<int64_t>(data.size()) != count)
            fail(ErrorCode::dimension, "tensor: data length " + std::to_string(data.size()) +
                                           " does not match shape " + shape_str(shape));
        n->shape = std::move(shape);
        n->value = std::move(data);
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }
    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.n_->value) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }
    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.n_->value) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(n_->shape.size()); }
    int64_t dim(int64_t i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    T* data() { return n_->value.data(); }
    const T* data() const { return n_->value.data(); }
    std::vector<T>& vec() { return n_->value; }
    const std::vector<T>& vec() const { return n_->value; }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        n_->requires_grad = v;
        return *this;
    }
    bool has_grad() const { return !n_->grad.empty(); }
    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) fail(ErrorCode::contract, "item: tensor has shape " + shape_str(shape()));
        return n_->value[0];
    }

    // Copy of the values, disconnected from any gradient flow.
    Tensor detach() const {
        Tensor t = from_data(n_->shape, n_->value);
        return t;
    }
    Tensor clone_with_grad_flag() const {
        Tensor t = from_data(n_->shape, n_->value);
        t.set_requires_grad(n_->requires_grad);
        return t;
    }

    std::shared_ptr<TensorNode<T>> node() const { return n_; }

private:
    std::shared_ptr<TensorNode<T>> n_;
};

// Reverse-mode tape. Constructing a Tape installs it as the current one for
// this thread (RAII, nestable); ops record backward closures only while a
// tape is current and some input requires gradient.
template <typename T>
class Tape {
public:
    Tape() : prev_(tl_current) { tl_current = this; }
    ~Tape() { tl_current = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return tl_current; }

    void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            fail(ErrorCode::contract, "backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (nodes_.empty()) fail(ErrorCode::contract, "backward: tape is empty");
        if (consumed_) fail(ErrorCode::state, "backward: tape already consumed; reset() first");
        consumed_ = true;
        loss.node()->ensure_grad();
        loss.node()->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    static thread_local Tape* tl_current;
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    Tape* prev_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::tl_current = nullptr;

namespace detail {

template <typename T>
inline bool tracing(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::current() == nullptr) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Right-aligned broadcasting over singleton dimensions, numpy-style.
struct BroadcastPlan {
    Shape out;
    std::vector<int64_t> stride_a;  // element strides into a per out dim (0 on broadcast dims)
    std::vector<int64_t> stride_b;
    bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    size_t rank = std::max(a.size(), b.size());
    p.out.resize(rank);
    p.stride_a.resize(rank);
    p.stride_b.resize(rank);
    // physical strides of the (right-aligned) inputs
    std::vector<int64_t> pa(rank, 0), pb(rank, 0), da(rank, 1), db(rank, 1);
    for (size_t i = 0; i < rank; ++i) {
        da[i] = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        db[i] = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    }
    int64_t sa = 1, sb = 1;
    for (size_t i = rank; i-- > 0;) {
        pa[i] = sa;
        pb[i] = sb;
        sa *= da[i];
        sb *= db[i];
    }
    for (size_t i = 0; i < rank; ++i) {
        if (da[i] == db[i]) {
            p.out[i] = da[i];
        } else if (da[i] == 1) {
            p.out[i] = db[i];
        } else if (db[i] == 1) {
            p.out[i] = da[i];
        } else {
            fail(ErrorCode::dimension, std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                           " are not broadcastable");
        }
        p.stride_a[i] = da[i] == 1 ? 0 : pa[i];
        p.stride_b[i] = db[i] == 1 ? 0 : pb[i];
    }
    return p;
}

// Iterate all output indices of a broadcast plan, calling fn(out_linear, a_off, b_off).
template <typename Fn>
inline void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
    size_t rank = p.out.size();
    int64_t total = shape_numel(p.out);
    if (rank == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<int64_t> idx(rank, 0);
    int64_t oa = 0, ob = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
        fn(lin, oa, ob);
        for (size_t d = rank; d-- > 0;) {
            idx[d]++;
            oa += p.stride_a[d];
            ob += p.stride_b[d];
            if (idx[d] < p.out[d]) break;
            idx[d] = 0;
            oa -= p.stride_a[d] * p.out[d];
            ob -= p.stride_b[d] * p.out[d];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

// FwdF(a, b) -> out; DaF(g, a, b, out) -> contribution to da; DbF likewise.
template <typename T, typename FwdF, typename DaF, typename DbF>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdF fwd, DaF dfa, DbF dfb) {
    auto plan = detail::plan_broadcast(a.shape(), b.shape(), name);
    Tensor<T> out = Tensor<T>::zeros(plan.out.empty() ? a.shape() : plan.out);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    if (plan.same) {
        int64_t n = a.numel();
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
        detail::for_each_broadcast(plan, [&](int64_t lin, int64_t oa, int64_t ob) { po[lin] = fwd(pa[oa], pb[ob]); });
    }
    if (detail::tracing<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        Tape<T>::current()->record([an, bn, on, plan, dfa, dfb]() {
            if (on->grad.empty()) return;
            const T* g = on->grad.data();
            const T* av = an->value.data();
            const T* bv = bn->value.data();
            const T* ov = on->value.data();
            T* ga = nullptr;
            T* gb = nullptr;
            if (an->requires_grad) {
                an->ensure_grad();
                ga = an->grad.data();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                gb = bn->grad.data();
            }
            if (!ga && !gb) return;
            if (plan.same) {
                int64_t n = static_cast<int64_t>(on->value.size());
                for (int64_t i = 0; i < n; ++i) {
                    if (ga) ga[i] += dfa(g[i], av[i], bv[i], ov[i]);
                    if (gb) gb[i] += dfb(g[i], av[i], bv[i], ov[i]);
                }
            } else {
                detail::for_each_broadcast(plan, [&](int64_t lin, int64_t oa, int64_t ob) {
                    if (ga) ga[oa] += dfa(g[lin], av[oa], bv[ob], ov[lin]);
                    if (gb) gb[ob] += dfb(g[lin], av[oa], bv[ob], ov[lin]);
                });
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T, T) { return g; },
        [](T g, T, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T, T) { return g; },
        [](T g, T, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y, T) { return g * y; },
        [](T g, T x, T, T) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T g, T, T y, T) { return g / y; },
        [](T g, T, T y, T o) { return -g * o / y; });
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

// FwdF(x) -> y; DF(g, x, y) -> dx contribution.
template <typename T, typename FwdF, typename DF>
Tensor<T> unary_op(const char*, const Tensor<T>& x, FwdF fwd, DF dfx) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, on, dfx]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* xv = xn->value.data();
            const T* ov = on->value.data();
            T* gx = xn->grad.data();
            int64_t n = static_cast<int64_t>(on->value.size());
            for (int64_t i = 0; i < n; ++i) gx[i] += dfx(g[i], xv[i], ov[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op<T>(
        "neg", x, [](T v) { return -v; }, [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op<T>(
        "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return unary_op<T>(
        "silu", x,
        [](T v) {
            T s = T(1) / (T(1) + std::exp(-v));
            return v * s;
        },
        [](T g, T v, T) {
            T s = T(1) / (T(1) + std::exp(-v));
            return g * s * (T(1) + v * (T(1) - s));
        });
}

template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return unary_op<T>(
        "gelu_tanh", x,
        [](T v) {
            T u = static_cast<T>(c) * (v + T(0.044715) * v * v * v);
            return T(0.5) * v * (T(1) + std::tanh(u));
        },
        [](T g, T v, T) {
            T u = static_cast<T>(c) * (v + T(0.044715) * v * v * v);
            T th = std::tanh(u);
            T du = static_cast<T>(c) * (T(1) + T(3) * T(0.044715) * v * v);
            return g * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
        });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_op<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T g, T, T y) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return unary_op<T>(
        "log", x, [](T v) { return std::log(v); }, [](T g, T v, T) { return g / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return unary_op<T>(
        "sqrt", x, [](T v) { return std::sqrt(v); }, [](T g, T, T y) { return g * T(0.5) / y; });
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x) {
    return unary_op<T>(
        "rsqrt", x, [](T v) { return T(1) / std::sqrt(v); },
        [](T g, T, T y) { return g * T(-0.5) * y * y * y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return unary_op<T>(
        "square", x, [](T v) { return v * v; }, [](T g, T v, T) { return g * T(2) * v; });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
    return unary_op<T>(
        "clamp_min", x, [floor](T v) { return v < floor ? floor : v; },
        [floor](T g, T v, T) { return v >= floor ? g : T(0); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return unary_op<T>(
        "add_scalar", x, [s](T v) { return v + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    return unary_op<T>(
        "mul_scalar", x, [s](T v) { return v * s; }, [s](T g, T, T) { return g * s; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int64_t> normalize_axes(const Shape& shape, std::vector<int64_t> axes, const char* op) {
    int64_t rank = static_cast<int64_t>(shape.size());
    if (axes.empty()) {
        axes.resize(static_cast<size_t>(rank));
        std::iota(axes.begin(), axes.end(), 0);
        return axes;
    }
    for (auto& a : axes) {
        if (a < 0) a += rank;
        if (a < 0 || a >= rank)
            fail(ErrorCode::dimension,
                 std::string(op) + ": axis out of range for shape " + shape_str(shape));
    }
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    return axes;
}

struct ReducePlan {
    Shape out_shape;            // with keepdims applied
    std::vector<int64_t> map;   // input linear index -> output linear index
    int64_t count = 1;          // number of input elements per output element
};

inline ReducePlan plan_reduce(const Shape& shape, const std::vector<int64_t>& axes, bool keepdims) {
    ReducePlan p;
    size_t rank = shape.size();
    std::vector<bool> reduced(rank, false);
    for (int64_t a : axes) reduced[static_cast<size_t>(a)] = true;
    Shape kept;  // out shape with reduced dims as 1
    for (size_t i = 0; i < rank; ++i) {
        kept.push_back(reduced[i] ? 1 : shape[i]);
        if (reduced[i]) p.count *= shape[i];
        if (keepdims)
            p.out_shape.push_back(reduced[i] ? 1 : shape[i]);
        else if (!reduced[i])
            p.out_shape.push_back(shape[i]);
    }
    if (p.out_shape.empty()) p.out_shape.push_back(1);
    // out strides aligned to input dims (0 where reduced)
    std::vector<int64_t> ostride(rank, 0);
    int64_t s = 1;
    for (size_t i = rank; i-- > 0;) {
        ostride[i] = reduced[i] ? 0 : s;
        if (!reduced[i]) s *= shape[i];
    }
    int64_t total = shape_numel(shape);
    p.map.resize(static_cast<size_t>(total));
    std::vector<int64_t> idx(rank, 0);
    int64_t o = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
        p.map[static_cast<size_t>(lin)] = o;
        for (size_t d = rank; d-- > 0;) {
            idx[d]++;
            o += ostride[d];
            if (idx[d] < shape[d]) break;
            idx[d] = 0;
            o -= ostride[d] * shape[d];
        }
    }
    return p;
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::vector<int64_t> axes = {}, bool keepdims = false) {
    axes = detail::normalize_axes(x.shape(), std::move(axes), "sum");
    auto plan = std::make_shared<detail::ReducePlan>(detail::plan_reduce(x.shape(), axes, keepdims));
    Tensor<T> out = Tensor<T>::zeros(plan->out_shape);
    const T* px = x.data();
    T* po = out.data();
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[plan->map[static_cast<size_t>(i)]] += px[i];
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, on, plan]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* gx = xn->grad.data();
            int64_t n = static_cast<int64_t>(xn->value.size());
            for (int64_t i = 0; i < n; ++i) gx[i] += g[plan->map[static_cast<size_t>(i)]];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::vector<int64_t> axes = {}, bool keepdims = false) {
    axes = detail::normalize_axes(x.shape(), std::move(axes), "mean");
    auto plan = detail::plan_reduce(x.shape(), axes, keepdims);
    T scale = T(1) / static_cast<T>(plan.count);
    Tensor<T> s = sum(x, axes, keepdims);
    return mul_scalar(s, scale);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
    int64_t rank = x.ndim();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        fail(ErrorCode::dimension, "softmax: axis out of range for shape " + shape_str(x.shape()));
    int64_t axis_len = x.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int64_t i = axis + 1; i < rank; ++i) inner *= x.dim(i);
    for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);

    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const T* row = px + o * axis_len * inner + in;
            T* orow = po + o * axis_len * inner + in;
            T mx = row[0];
            for (int64_t a = 1; a < axis_len; ++a) mx = std::max(mx, row[a * inner]);
            T denom = T(0);
            for (int64_t a = 0; a < axis_len; ++a) {
                T e = std::exp(row[a * inner] - mx);
                orow[a * inner] = e;
                denom += e;
            }
            T inv = T(1) / denom;
            for (int64_t a = 0; a < axis_len; ++a) orow[a * inner] *= inv;
        }
    }
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, on, outer, inner, axis_len]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            const T* y = on->value.data();
            T* gx = xn->grad.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    int64_t base = o * axis_len * inner + in;
                    T dot = T(0);
                    for (int64_t a = 0; a < axis_len; ++a) dot += g[base + a * inner] * y[base + a * inner];
                    for (int64_t a = 0; a < axis_len; ++a) {
                        int64_t i = base + a * inner;
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        fail(ErrorCode::dimension,
             "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor<T> out = Tensor<T>::from_data(std::move(shape), x.vec());
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, on]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* gx = xn->grad.data();
            int64_t n = static_cast<int64_t>(xn->value.size());
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

namespace detail {
// gather[i] = input linear index feeding output position i under the permutation
inline std::vector<int64_t> permute_gather(const Shape& in_shape, const std::vector<int64_t>& perm) {
    size_t rank = in_shape.size();
    std::vector<int64_t> in_strides(rank, 1);
    for (size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    Shape out_shape(rank);
    std::vector<int64_t> gstrides(rank);
    for (size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
        gstrides[i] = in_strides[static_cast<size_t>(perm[i])];
    }
    int64_t total = shape_numel(out_shape);
    std::vector<int64_t> gather(static_cast<size_t>(total));
    std::vector<int64_t> idx(rank, 0);
    int64_t off = 0;
    for (int64_t lin = 0; lin < total; ++lin) {
        gather[static_cast<size_t>(lin)] = off;
        for (size_t d = rank; d-- > 0;) {
            idx[d]++;
            off += gstrides[d];
            if (idx[d] < out_shape[d]) break;
            idx[d] = 0;
            off -= gstrides[d] * out_shape[d];
        }
    }
    return gather;
}
}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int64_t>& perm) {
    size_t rank = x.shape().size();
    if (perm.size() != rank) fail(ErrorCode::dimension, "permute: rank mismatch for " + shape_str(x.shape()));
    std::vector<bool> seen(rank, false);
    Shape out_shape(rank);
    for (size_t i = 0; i < rank; ++i) {
        int64_t p = perm[i];
        if (p < 0 || p >= static_cast<int64_t>(rank) || seen[static_cast<size_t>(p)])
            fail(ErrorCode::dimension, "permute: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
        out_shape[i] = x.dim(p);
    }
    auto gather = std::make_shared<std::vector<int64_t>>(detail::permute_gather(x.shape(), perm));
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* px = x.data();
    T* po = out.data();
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = px[(*gather)[static_cast<size_t>(i)]];
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, on, gather]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* gx = xn->grad.data();
            int64_t n = static_cast<int64_t>(on->value.size());
            for (int64_t i = 0; i < n; ++i) gx[(*gather)[static_cast<size_t>(i)]] += g[i];
        });
    }
    return out;
}

// Select rows along axis 0 (doubles as embedding lookup on a table).
template <typename T>
Tensor<T> index_rows(const Tensor<T>& x, const std::vector<int64_t>& indices) {
    int64_t rows = x.dim(0);
    int64_t rowlen = x.numel() / rows;
    for (int64_t i : indices)
        if (i < 0 || i >= rows)
            fail(ErrorCode::contract, "index_rows: index " + std::to_string(i) + " out of range [0," +
                                          std::to_string(rows) + ")");
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<int64_t>(indices.size());
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* px = x.data();
    T* po = out.data();
    for (size_t r = 0; r < indices.size(); ++r)
        std::copy(px + indices[r] * rowlen, px + (indices[r] + 1) * rowlen, po + static_cast<int64_t>(r) * rowlen);
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        auto idx = std::make_shared<std::vector<int64_t>>(indices);
        Tape<T>::current()->record([xn, on, idx, rowlen]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* gx = xn->grad.data();
            for (size_t r = 0; r < idx->size(); ++r) {
                const T* src = g + static_cast<int64_t>(r) * rowlen;
                T* dst = gx + (*idx)[r] * rowlen;
                for (int64_t j = 0; j < rowlen; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

}  // namespace pixelgen
