#pragma once

// AdamW with bias correction and decoupled weight decay, EMA shadow
// parameters, and global gradient-norm clipping.

#include "core/params.hpp"

namespace pixelgen {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
class AdamW {
public:
    AdamW(const NamedParams<T>& params, double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.0)
        : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
        for (const auto& [name, t] : params_) {
            m_.push_back(std::vector<T>(static_cast<size_t>(t.numel()), T(0)));
            v_.push_back(std::vector<T>(static_cast<size_t>(t.numel()), T(0)));
        }
    }

    void step() {
        ++step_count_;
        T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
        T bc1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(step_count_)));
        T bc2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(step_count_)));
        T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_), wd = static_cast<T>(weight_decay_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor<T>& p = params_[pi].second;
            if (!p.has_grad()) continue;
            const std::vector<T>& g = p.grad();
            T* pv = p.data();
            T* m = m_[pi].data();
            T* v = v_[pi].data();
            int64_t n = p.numel();
            for (int64_t i = 0; i < n; ++i) {
                T gi = g[static_cast<size_t>(i)];
                m[i] = b1 * m[i] + (T(1) - b1) * gi;
                v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
                T mhat = m[i] / bc1;
                T vhat = v[i] / bc2;
                pv[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * pv[i]);
            }
        }
    }

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t s) { step_count_ = s; }
    std::vector<std::vector<T>>& moments_m() { return m_; }
    std::vector<std::vector<T>>& moments_v() { return v_; }
    const NamedParams<T>& params() const { return params_; }

private:
    NamedParams<T> params_;
    std::vector<std::vector<T>> m_, v_;
    int64_t step_count_ = 0;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
};

// shadow <- decay*shadow + (1-decay)*params
template <typename T>
class Ema {
public:
    Ema(const NamedParams<T>& params, double decay) : params_(params), decay_(decay) {
        if (decay < 0.0 || decay >= 1.0) fail(ErrorCode::config, "ema: decay must lie in [0,1)");
        for (const auto& [name, t] : params_) shadow_.push_back(t.vec());
    }

    void update() {
        T d = static_cast<T>(decay_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            const T* pv = params_[pi].second.data();
            T* s = shadow_[pi].data();
            int64_t n = params_[pi].second.numel();
            for (int64_t i = 0; i < n; ++i) s[i] = d * s[i] + (T(1) - d) * pv[i];
        }
    }

    const std::vector<std::vector<T>>& shadow() const { return shadow_; }
    std::vector<std::vector<T>>& shadow() { return shadow_; }
    const NamedParams<T>& params() const { return params_; }
    double decay() const { return decay_; }

private:
    NamedParams<T> params_;
    std::vector<std::vector<T>> shadow_;
    double decay_;
};

// Scale all gradients by max_norm/norm when the global l2 norm exceeds
// max_norm; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(const NamedParams<T>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        T scale = static_cast<T>(max_norm / norm);
        for (const auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            for (T& g : const_cast<Tensor<T>&>(t).grad()) g *= scale;
        }
    }
    return norm;
}

}  // namespace pixelgen
