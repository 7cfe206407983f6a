#pragma once

// Forward diffusion process: time sampling, linear interpolation paths,
// x-prediction <-> velocity conversion, and the flow-matching objective.

#include "core/tensor.hpp"

namespace pixelgen {

enum class TimeSamplerKind { logit_normal, uniform };

struct TimeSamplerConfig {
    TimeSamplerKind kind = TimeSamplerKind::logit_normal;
    double mu = -0.8;
    double sigma = 0.8;
};

inline double sigmoid_scalar(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// t_i = sigmoid(z_i), z_i ~ N(mu, sigma^2) for logit_normal; uniform(0,1) otherwise.
template <typename T>
std::vector<T> sample_time(int64_t n, const TimeSamplerConfig& cfg, Rng& rng) {
    if (n < 1) fail(ErrorCode::contract, "sample_time: n must be >= 1");
    if (cfg.sigma <= 0) fail(ErrorCode::config, "sample_time: sigma must be positive");
    std::vector<T> t(static_cast<size_t>(n));
    for (auto& v : t) {
        if (cfg.kind == TimeSamplerKind::logit_normal)
            v = static_cast<T>(sigmoid_scalar(cfg.mu + cfg.sigma * rng.normal()));
        else
            v = static_cast<T>(rng.uniform());
    }
    return t;
}

// Per-sample scalars broadcast against [B,C,H,W].
template <typename T>
Tensor<T> per_sample(const std::vector<T>& v) {
    return Tensor<T>::from_data({static_cast<int64_t>(v.size()), 1, 1, 1}, std::vector<T>(v));
}

// x_t = t*x + (1-t)*eps, t per sample.
template <typename T>
Tensor<T> interpolate(const Tensor<T>& x, const Tensor<T>& eps, const std::vector<T>& t) {
    if (x.shape() != eps.shape())
        fail(ErrorCode::dimension,
             "interpolate: shapes disagree: " + shape_str(x.shape()) + " vs " + shape_str(eps.shape()));
    if (static_cast<int64_t>(t.size()) != x.dim(0))
        fail(ErrorCode::dimension, "interpolate: need one t per sample");
    for (T ti : t)
        if (ti < T(0) || ti > T(1))
            fail(ErrorCode::contract, "interpolate: t must lie in [0,1]");
    std::vector<T> omt(t.size());
    for (size_t i = 0; i < t.size(); ++i) omt[i] = T(1) - t[i];
    return add(mul(x, per_sample(t)), mul(eps, per_sample(omt)));
}

// Ground-truth velocity v = x - eps (independent of t).
template <typename T>
Tensor<T> gt_velocity(const Tensor<T>& x, const Tensor<T>& eps) {
    if (x.shape() != eps.shape())
        fail(ErrorCode::dimension,
             "gt_velocity: shapes disagree: " + shape_str(x.shape()) + " vs " + shape_str(eps.shape()));
    return sub(x, eps);
}

// v_pred = (x_pred - x_t) / max(1-t, denom_clip), per sample.
template <typename T>
Tensor<T> x_to_v(const Tensor<T>& x_pred, const Tensor<T>& x_t, const std::vector<T>& t, T denom_clip) {
    if (denom_clip <= T(0)) fail(ErrorCode::config, "x_to_v: denom_clip must be positive");
    if (x_pred.shape() != x_t.shape())
        fail(ErrorCode::dimension,
             "x_to_v: shapes disagree: " + shape_str(x_pred.shape()) + " vs " + shape_str(x_t.shape()));
    std::vector<T> inv(t.size());
    for (size_t i = 0; i < t.size(); ++i) inv[i] = T(1) / std::max(T(1) - t[i], denom_clip);
    return mul(sub(x_pred, x_t), per_sample(inv));
}

// One training batch: clean images, noise, times, noisy images, velocities.
template <typename T>
struct DiffusionBatch {
    Tensor<T> x;
    Tensor<T> eps;
    std::vector<T> t;
    Tensor<T> x_t;
    Tensor<T> v;
    T denom_clip = T(0.05);

    static DiffusionBatch make(const Tensor<T>& x, const Tensor<T>& eps, std::vector<T> t,
                               T denom_clip = T(0.05)) {
        DiffusionBatch b;
        b.x = x;
        b.eps = eps;
        b.x_t = interpolate(x, eps, t);
        b.v = gt_velocity(x, eps);
        b.t = std::move(t);
        b.denom_clip = denom_clip;
        return b;
    }
};

// mean over batch and pixels of ||(x_pred - x) / max(1-t, denom_clip)||^2.
template <typename T>
Tensor<T> fm_loss(const Tensor<T>& x_pred, const DiffusionBatch<T>& batch) {
    if (x_pred.shape() != batch.x.shape())
        fail(ErrorCode::dimension, "fm_loss: prediction shape " + shape_str(x_pred.shape()) +
                                       " does not match batch " + shape_str(batch.x.shape()));
    std::vector<T> inv(batch.t.size());
    for (size_t i = 0; i < batch.t.size(); ++i)
        inv[i] = T(1) / std::max(T(1) - batch.t[i], batch.denom_clip);
    Tensor<T> scaled = mul(sub(x_pred, batch.x), per_sample(inv));
    return mean(square(scaled));
}

}  // namespace pixelgen
