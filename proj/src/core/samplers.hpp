#pragma once

// Deterministic ODE integration from noise (t=0) to image (t=1): Euler, Heun,
// and variable-step 2nd-order Adams-Bashforth over a timeshifted grid, with
// interval-gated classifier-free guidance in velocity space.

#include <functional>

#include "core/flow.hpp"

namespace pixelgen {

enum class Solver { euler, heun, adams2 };

struct SamplerConfig {
    Solver solver = Solver::euler;
    int64_t steps = 50;
    double timeshift = 1.0;
    bool timeshift_invert = false;  // flips the grid mapping, kept for comparisons
    double cfg_scale = 1.0;         // 1.0 = guidance off
    double cfg_lo = 0.1;
    double cfg_hi = 0.9;
    double denom_clip = 0.05;

    void validate() const {
        if (steps < 1) fail(ErrorCode::config, "sampler: steps must be >= 1");
        if (solver == Solver::adams2 && steps < 2)
            fail(ErrorCode::config, "sampler: adams2 needs at least 2 steps");
        if (timeshift < 1.0) fail(ErrorCode::config, "sampler: timeshift must be >= 1");
        if (cfg_scale < 1.0) fail(ErrorCode::config, "sampler: cfg_scale must be >= 1");
        if (!(cfg_lo < cfg_hi)) fail(ErrorCode::config, "sampler: cfg interval must satisfy lo < hi");
        if (cfg_lo < 0.0 || cfg_hi > 1.0) fail(ErrorCode::config, "sampler: cfg interval must lie in [0,1]");
        if (denom_clip <= 0) fail(ErrorCode::config, "sampler: denom_clip must be positive");
    }
};

// t_i = s*u / (1 + (s-1)*u) with u = i/N; identity at s=1, endpoints pinned.
inline std::vector<double> timeshift_grid(int64_t n, double s, bool invert = false) {
    if (n < 1) fail(ErrorCode::config, "timeshift_grid: need at least one step");
    if (s < 1.0) fail(ErrorCode::config, "timeshift_grid: shift must be >= 1");
    std::vector<double> t(static_cast<size_t>(n) + 1);
    for (int64_t i = 0; i <= n; ++i) {
        double u = static_cast<double>(i) / static_cast<double>(n);
        t[static_cast<size_t>(i)] = invert ? u / (s - (s - 1.0) * u) : s * u / (1.0 + (s - 1.0) * u);
    }
    t.front() = 0.0;
    t.back() = 1.0;
    return t;
}

// Model surface the sampler drives: x-prediction given (x_t, t, class).
template <typename T>
struct XPredictor {
    virtual ~XPredictor() = default;
    virtual Tensor<T> predict_x(const Tensor<T>& x_t, const std::vector<T>& t,
                                const std::vector<int64_t>& classes) = 0;
    virtual int64_t null_class() const = 0;
};

// Inside [lo, hi]: v_uncond + scale*(v_cond - v_uncond); outside, guidance is
// disabled and the conditional velocity is used unchanged.
template <typename T>
Tensor<T> guided_velocity(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, double t,
                          const SamplerConfig& cfg) {
    if (v_cond.shape() != v_uncond.shape())
        fail(ErrorCode::dimension, "guided_velocity: shapes disagree: " + shape_str(v_cond.shape()) + " vs " +
                                       shape_str(v_uncond.shape()));
    if (cfg.cfg_scale == 1.0 || t < cfg.cfg_lo || t > cfg.cfg_hi) return v_cond;
    return add(v_uncond, mul_scalar(sub(v_cond, v_uncond), static_cast<T>(cfg.cfg_scale)));
}

// Velocity field at (x, t): one model evaluation, plus the null-class branch
// only when guidance is enabled and t lies inside the interval.
template <typename T>
Tensor<T> velocity_at(XPredictor<T>& model, const Tensor<T>& x, double t, const std::vector<int64_t>& classes,
                      const SamplerConfig& cfg) {
    std::vector<T> tv(static_cast<size_t>(x.dim(0)), static_cast<T>(t));
    Tensor<T> v_cond = x_to_v(model.predict_x(x, tv, classes), x, tv, static_cast<T>(cfg.denom_clip));
    bool guided = cfg.cfg_scale > 1.0 && t >= cfg.cfg_lo && t <= cfg.cfg_hi;
    if (!guided) return v_cond;
    std::vector<int64_t> null_c(classes.size(), model.null_class());
    Tensor<T> v_uncond = x_to_v(model.predict_x(x, tv, null_c), x, tv, static_cast<T>(cfg.denom_clip));
    return add(v_uncond, mul_scalar(sub(v_cond, v_uncond), static_cast<T>(cfg.cfg_scale)));
}

template <typename T>
Tensor<T> euler_step(const Tensor<T>& x, const Tensor<T>& v, T h) {
    return add(x, mul_scalar(v, h));
}

// Variable-step two-step Adams-Bashforth:
// x + h_n * ((1 + h_n/(2 h_prev)) * v_n - (h_n/(2 h_prev)) * v_prev).
template <typename T>
Tensor<T> adams2_step(const Tensor<T>& x, const Tensor<T>& v_n, const Tensor<T>& v_prev, T h_n, T h_prev) {
    if (h_prev <= T(0)) fail(ErrorCode::contract, "adams2_step: previous step size must be positive");
    T r = h_n / (T(2) * h_prev);
    Tensor<T> combo = sub(mul_scalar(v_n, T(1) + r), mul_scalar(v_prev, r));
    return add(x, mul_scalar(combo, h_n));
}

// Integrate dx/dt = velocity(x, t) along the grid. Heun evaluates twice per
// interior step and falls back to the plain predictor on the final step to
// t=1, so the endpoint is never evaluated: model evaluations are N for Euler,
// 2N-1 for Heun, N for Adams-2nd.
template <typename T>
Tensor<T> integrate(const std::function<Tensor<T>(const Tensor<T>&, double)>& velocity, Tensor<T> x,
                    const std::vector<double>& grid, Solver solver) {
    if (grid.size() < 2) fail(ErrorCode::contract, "integrate: grid needs at least two nodes");
    Tensor<T> v_prev;
    T h_prev = T(0);
    size_t n = grid.size() - 1;
    for (size_t i = 0; i < n; ++i) {
        double t = grid[i], t_next = grid[i + 1];
        T h = static_cast<T>(t_next - t);
        switch (solver) {
            case Solver::euler: {
                x = euler_step(x, velocity(x, t), h);
                break;
            }
            case Solver::heun: {
                Tensor<T> v1 = velocity(x, t);
                Tensor<T> xp = euler_step(x, v1, h);
                if (i + 1 == n && t_next >= 1.0) {
                    x = xp;
                } else {
                    Tensor<T> v2 = velocity(xp, t_next);
                    x = add(x, mul_scalar(add(v1, v2), h / T(2)));
                }
                break;
            }
            case Solver::adams2: {
                Tensor<T> v = velocity(x, t);
                if (!v_prev.defined())
                    x = euler_step(x, v, h);
                else
                    x = adams2_step(x, v, v_prev, h, h_prev);
                v_prev = v;
                h_prev = h;
                break;
            }
        }
    }
    return x;
}

template <typename T>
Tensor<T> clamp_unit(const Tensor<T>& x) {
    Tensor<T> out = x.detach();
    for (auto& v : out.vec()) v = std::min(T(1), std::max(T(-1), v));
    return out;
}

// Integrate n images from seeded standard-normal noise at t=0 to t=1; the
// returned images are clamped to [-1,1] for serialization, internal states
// are never clamped.
template <typename T>
Tensor<T> sample_images(XPredictor<T>& model, const std::vector<int64_t>& classes, const SamplerConfig& cfg,
                        Rng& rng, int64_t channels, int64_t image_size) {
    cfg.validate();
    int64_t n = static_cast<int64_t>(classes.size());
    if (n < 1) fail(ErrorCode::contract, "sample_images: need at least one class label");
    Tensor<T> x = Tensor<T>::randn({n, channels, image_size, image_size}, rng);
    std::vector<double> grid = timeshift_grid(cfg.steps, cfg.timeshift, cfg.timeshift_invert);
    auto velocity = [&](const Tensor<T>& xt, double t) { return velocity_at(model, xt, t, classes, cfg); };
    Tensor<T> out = integrate<T>(velocity, std::move(x), grid, cfg.solver);
    return clamp_unit(out);
}

}  // namespace pixelgen
