#pragma once

// Central-difference gradient verification. Used by tests and by the `check`
// command; run with T=double, float tolerances are unreachable.

#include <functional>

#include "core/tensor.hpp"

namespace pixelgen {

// Max over entries of |analytic - numeric| / (|analytic| + 1e-8) for a
// scalar-valued f differentiated w.r.t. x.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x0, double h) {
    Tensor<T> x = x0.detach();
    x.set_requires_grad(true);
    {
        Tape<T> tape;
        Tensor<T> loss = f(x);
        tape.backward(loss);
    }
    std::vector<T> analytic = x.has_grad() ? x.grad() : std::vector<T>(static_cast<size_t>(x.numel()), T(0));

    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        Tensor<T> xp = x0.detach();
        Tensor<T> xm = x0.detach();
        xp.data()[i] += static_cast<T>(h);
        xm.data()[i] -= static_cast<T>(h);
        double fp = static_cast<double>(f(xp).item());
        double fm = static_cast<double>(f(xm).item());
        double numeric = (fp - fm) / (2.0 * h);
        double a = static_cast<double>(analytic[static_cast<size_t>(i)]);
        double err = std::abs(a - numeric) / (std::abs(a) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

// Same check against a list of parameter tensors; f() closes over them.
template <typename T>
double finite_diff_check_params(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& params,
                                double h) {
    for (const Tensor<T>& p : params) const_cast<Tensor<T>&>(p).zero_grad();
    {
        Tape<T> tape;
        Tensor<T> loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (const Tensor<T>& p : params)
        analytic.push_back(p.has_grad() ? p.grad() : std::vector<T>(static_cast<size_t>(p.numel()), T(0)));

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = const_cast<Tensor<T>&>(params[pi]);
        for (int64_t i = 0; i < p.numel(); ++i) {
            T saved = p.data()[i];
            p.data()[i] = saved + static_cast<T>(h);
            double fp = static_cast<double>(f().item());
            p.data()[i] = saved - static_cast<T>(h);
            double fm = static_cast<double>(f().item());
            p.data()[i] = saved;
            double numeric = (fp - fm) / (2.0 * h);
            double a = static_cast<double>(analytic[pi][static_cast<size_t>(i)]);
            double err = std::abs(a - numeric) / (std::abs(a) + 1e-8);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace pixelgen
