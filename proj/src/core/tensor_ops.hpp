#pragma once

// Matrix products, convolution, rotary embeddings, and the small composite
// layers (linear, rms_norm, patchify) built from them.

#include "core/tensor.hpp"

namespace pixelgen {

namespace detail {

// C (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        T* c = C + i * n;
        if (!accumulate)
            for (int64_t j = 0; j < n; ++j) c[j] = T(0);
        const T* a = A + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            T av = a[kk];
            const T* b = B + kk * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* b = B + j * k;
            T acc = T(0);
            for (int64_t kk = 0; kk < k; ++kk) acc += a[kk] * b[kk];
            if (accumulate)
                c[j] += acc;
            else
                c[j] = acc;
        }
    }
}

// C (+)= A[p,m]^T * B[p,n]
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int64_t m, int64_t p, int64_t n, bool accumulate) {
    if (!accumulate)
        for (int64_t i = 0; i < m * n; ++i) C[i] = T(0);
    for (int64_t pp = 0; pp < p; ++pp) {
        const T* a = A + pp * m;
        const T* b = B + pp * n;
        for (int64_t i = 0; i < m; ++i) {
            T av = a[i];
            T* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        fail(ErrorCode::dimension, "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                       shape_str(b.shape()));
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
    if (detail::tracing<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        Tape<T>::current()->record([an, bn, on, m, k, n]() {
            if (on->grad.empty()) return;
            const T* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                detail::gemm_nt(g, bn->value.data(), an->grad.data(), m, n, k, true);  // dA = g * B^T
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::gemm_tn(an->value.data(), g, bn->grad.data(), k, m, n, true);  // dB = A^T * g
            }
        });
    }
    return out;
}

// Batched matmul: a[N,m,k] * b[N,k,n] -> [N,m,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        fail(ErrorCode::dimension,
             "bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t N = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> out = Tensor<T>::zeros({N, m, n});
    for (int64_t t = 0; t < N; ++t)
        detail::gemm_nn(a.data() + t * m * k, b.data() + t * k * n, out.data() + t * m * n, m, k, n, false);
    if (detail::tracing<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        Tape<T>::current()->record([an, bn, on, N, m, k, n]() {
            if (on->grad.empty()) return;
            const T* g = on->grad.data();
            for (int64_t t = 0; t < N; ++t) {
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::gemm_nt(g + t * m * n, bn->value.data() + t * k * n, an->grad.data() + t * m * k, m,
                                    n, k, true);
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::gemm_tn(an->value.data() + t * m * k, g + t * m * n, bn->grad.data() + t * k * n, k,
                                    m, n, true);
                }
            }
        });
    }
    return out;
}

// Batched matmul with transposed rhs: a[N,m,k] * b[N,n,k]^T -> [N,m,n].
template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        fail(ErrorCode::dimension,
             "bmm_nt: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t N = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({N, m, n});
    for (int64_t t = 0; t < N; ++t)
        detail::gemm_nt(a.data() + t * m * k, b.data() + t * n * k, out.data() + t * m * n, m, k, n, false);
    if (detail::tracing<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        Tape<T>::current()->record([an, bn, on, N, m, k, n]() {
            if (on->grad.empty()) return;
            const T* g = on->grad.data();
            for (int64_t t = 0; t < N; ++t) {
                if (an->requires_grad) {
                    an->ensure_grad();
                    detail::gemm_nn(g + t * m * n, bn->value.data() + t * n * k, an->grad.data() + t * m * k, m,
                                    n, k, true);  // dA = g * B
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    detail::gemm_tn(g + t * m * n, an->value.data() + t * m * k, bn->grad.data() + t * n * k, n,
                                    m, k, true);  // dB = g^T * A
                }
            }
        });
    }
    return out;
}

// Conv2d over NCHW input. Kernel is [O,C,kh,kw]; square padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad) {
    if (x.ndim() != 4 || w.ndim() != 4)
        fail(ErrorCode::dimension, "conv2d: expected 4-d input and kernel, got " + shape_str(x.shape()) +
                                       " and " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        fail(ErrorCode::dimension, "conv2d: channel mismatch between input " + shape_str(x.shape()) +
                                       " and kernel " + shape_str(w.shape()));
    if (stride < 1) fail(ErrorCode::contract, "conv2d: stride must be >= 1");
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) fail(ErrorCode::dimension, "conv2d: input " + shape_str(x.shape()) + " too small");
    Tensor<T> out = Tensor<T>::zeros({B, O, Ho, Wo});
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t o = 0; o < O; ++o) {
            for (int64_t oy = 0; oy < Ho; ++oy) {
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    T acc = T(0);
                    for (int64_t c = 0; c < C; ++c) {
                        const T* xc = px + (b * C + c) * H * W;
                        const T* wc = pw + (o * C + c) * kh * kw;
                        for (int64_t ky = 0; ky < kh; ++ky) {
                            int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                int64_t ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= W) continue;
                                acc += xc[iy * W + ix] * wc[ky * kw + kx];
                            }
                        }
                    }
                    po[((b * O + o) * Ho + oy) * Wo + ox] = acc;
                }
            }
        }
    }
    if (detail::tracing<T>({&x, &w})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto wn = w.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, wn, on, B, C, H, W, O, kh, kw, Ho, Wo, stride, pad]() {
            if (on->grad.empty()) return;
            const T* g = on->grad.data();
            const T* xv = xn->value.data();
            const T* wv = wn->value.data();
            T* gx = nullptr;
            T* gw = nullptr;
            if (xn->requires_grad) {
                xn->ensure_grad();
                gx = xn->grad.data();
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                gw = wn->grad.data();
            }
            if (!gx && !gw) return;
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t o = 0; o < O; ++o) {
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            T gv = g[((b * O + o) * Ho + oy) * Wo + ox];
                            if (gv == T(0)) continue;
                            for (int64_t c = 0; c < C; ++c) {
                                const T* xc = xv + (b * C + c) * H * W;
                                const T* wc = wv + (o * C + c) * kh * kw;
                                T* gxc = gx ? gx + (b * C + c) * H * W : nullptr;
                                T* gwc = gw ? gw + (o * C + c) * kh * kw : nullptr;
                                for (int64_t ky = 0; ky < kh; ++ky) {
                                    int64_t iy = oy * stride + ky - pad;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int64_t kx = 0; kx < kw; ++kx) {
                                        int64_t ix = ox * stride + kx - pad;
                                        if (ix < 0 || ix >= W) continue;
                                        if (gxc) gxc[iy * W + ix] += gv * wc[ky * kw + kx];
                                        if (gwc) gwc[ky * kw + kx] += gv * xc[iy * W + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// 2-d rotary position embedding over [B, heads, P, dh] with P laid out on a
// grid_h x grid_w grid. First half of each head dim rotates by the row angle,
// second half by the column angle; dh must be divisible by 4.
template <typename T>
Tensor<T> rope2d(const Tensor<T>& x, int64_t grid_h, int64_t grid_w, double base = 10000.0) {
    if (x.ndim() != 4) fail(ErrorCode::dimension, "rope2d: expected [B,heads,P,dh], got " + shape_str(x.shape()));
    int64_t B = x.dim(0), Hn = x.dim(1), P = x.dim(2), dh = x.dim(3);
    if (dh % 4 != 0)
        fail(ErrorCode::config, "rope2d: head dim " + std::to_string(dh) + " not divisible by 4");
    if (P != grid_h * grid_w)
        fail(ErrorCode::dimension, "rope2d: token count " + std::to_string(P) + " does not match grid " +
                                       std::to_string(grid_h) + "x" + std::to_string(grid_w));
    int64_t pairs_per_axis = dh / 4;
    // cos/sin per (token, pair): axis pairs [0, dh/4) use the row index, [dh/4, dh/2) the column.
    auto cs = std::make_shared<std::vector<T>>(static_cast<size_t>(P * (dh / 2) * 2));
    for (int64_t p = 0; p < P; ++p) {
        int64_t row = p / grid_w, col = p % grid_w;
        for (int64_t j = 0; j < dh / 2; ++j) {
            int64_t axis_j = j % pairs_per_axis;
            double freq = std::pow(base, -static_cast<double>(axis_j) / static_cast<double>(pairs_per_axis));
            double angle = static_cast<double>(j < pairs_per_axis ? row : col) * freq;
            (*cs)[static_cast<size_t>((p * (dh / 2) + j) * 2)] = static_cast<T>(std::cos(angle));
            (*cs)[static_cast<size_t>((p * (dh / 2) + j) * 2 + 1)] = static_cast<T>(std::sin(angle));
        }
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t bh = 0; bh < B * Hn; ++bh) {
        for (int64_t p = 0; p < P; ++p) {
            const T* xi = px + (bh * P + p) * dh;
            T* oi = po + (bh * P + p) * dh;
            const T* pc = cs->data() + p * (dh / 2) * 2;
            for (int64_t j = 0; j < dh / 2; ++j) {
                T c = pc[j * 2], s = pc[j * 2 + 1];
                T a = xi[j * 2], b = xi[j * 2 + 1];
                oi[j * 2] = a * c - b * s;
                oi[j * 2 + 1] = a * s + b * c;
            }
        }
    }
    if (detail::tracing<T>({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto on = out.node();
        Tape<T>::current()->record([xn, on, cs, B, Hn, P, dh]() {
            if (on->grad.empty() || !xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = on->grad.data();
            T* gx = xn->grad.data();
            for (int64_t bh = 0; bh < B * Hn; ++bh) {
                for (int64_t p = 0; p < P; ++p) {
                    const T* gi = g + (bh * P + p) * dh;
                    T* gxi = gx + (bh * P + p) * dh;
                    const T* pc = cs->data() + p * (dh / 2) * 2;
                    for (int64_t j = 0; j < dh / 2; ++j) {
                        T c = pc[j * 2], s = pc[j * 2 + 1];
                        T ga = gi[j * 2], gb = gi[j * 2 + 1];
                        gxi[j * 2] += ga * c + gb * s;  // transpose of the rotation
                        gxi[j * 2 + 1] += -ga * s + gb * c;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// composite layers
// ---------------------------------------------------------------------------

// x [..., in] * w [in, out] + b [out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    Shape s = x.shape();
    int64_t in_dim = s.back();
    int64_t rows = x.numel() / in_dim;
    Tensor<T> flat = reshape(x, {rows, in_dim});
    Tensor<T> y = matmul(flat, w);
    y = add(y, b);
    s.back() = w.dim(1);
    return reshape(y, s);
}

// bias-free variant
template <typename T>
Tensor<T> linear_nb(const Tensor<T>& x, const Tensor<T>& w) {
    Shape s = x.shape();
    int64_t in_dim = s.back();
    int64_t rows = x.numel() / in_dim;
    Tensor<T> y = matmul(reshape(x, {rows, in_dim}), w);
    s.back() = w.dim(1);
    return reshape(y, s);
}

// RMS norm over the last axis, multiplied by a learned gain.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(1e-6)) {
    Tensor<T> ms = mean(square(x), {-1}, true);
    Tensor<T> inv = rsqrt(add_scalar(ms, eps));
    return mul(mul(x, inv), gain);
}

// [B,C,H,W] -> [B, P, C*p*p] with P = (H/p)*(W/p); token features ordered (c, py, px).
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, int64_t p) {
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % p != 0 || W % p != 0)
        fail(ErrorCode::config, "patchify: spatial size " + shape_str(x.shape()) + " not divisible by patch " +
                                    std::to_string(p));
    int64_t Hp = H / p, Wp = W / p;
    Tensor<T> t = reshape(x, {B, C, Hp, p, Wp, p});
    t = permute(t, {0, 2, 4, 1, 3, 5});
    return reshape(t, {B, Hp * Wp, C * p * p});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int64_t p, int64_t C, int64_t H, int64_t W) {
    int64_t B = tokens.dim(0);
    int64_t Hp = H / p, Wp = W / p;
    if (tokens.dim(1) != Hp * Wp || tokens.dim(2) != C * p * p)
        fail(ErrorCode::dimension, "unpatchify: token shape " + shape_str(tokens.shape()) +
                                       " does not match target image");
    Tensor<T> t = reshape(tokens, {B, Hp, Wp, C, p, p});
    t = permute(t, {0, 3, 1, 4, 2, 5});
    return reshape(t, {B, C, H, W});
}

// Sinusoidal embedding of per-sample times; frequencies geometric in [1, 1e4].
// Built as plain data: gradients never flow into t.
template <typename T>
Tensor<T> time_embedding(const std::vector<T>& t, int64_t dim) {
    if (dim % 2 != 0) fail(ErrorCode::config, "time_embedding: dim must be even");
    int64_t half = dim / 2;
    int64_t B = static_cast<int64_t>(t.size());
    std::vector<T> data(static_cast<size_t>(B * dim));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < half; ++i) {
            double freq = half == 1 ? 1.0 : std::pow(1e4, static_cast<double>(i) / static_cast<double>(half - 1));
            double arg = static_cast<double>(t[static_cast<size_t>(b)]) * freq;
            data[static_cast<size_t>(b * dim + i)] = static_cast<T>(std::sin(arg));
            data[static_cast<size_t>(b * dim + half + i)] = static_cast<T>(std::cos(arg));
        }
    }
    return Tensor<T>::from_data({B, dim}, std::move(data));
}

}  // namespace pixelgen
