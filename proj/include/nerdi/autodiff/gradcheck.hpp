#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "nerdi/autodiff/ops.hpp"

namespace nerdi::ad {

template <class T>
using ScalarFn = std::function<Var<T>(const Var<T>&)>;

namespace detail {

template <class T>
T eval_scalar(const ScalarFn<T>& f, const Tensor<T>& x, const char* where) {
    const Var<T> y = f(Var<T>::constant(x));
    if (y.numel() != 1) throw ShapeError("gradcheck: function must return a scalar");
    const T v = y.value().item();
    if (!std::isfinite(v)) throw DomainError(std::string("gradcheck: non-finite function value at ") + where);
    return v;
}

}  // namespace detail

/// Max over the checked coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// with the numeric derivative taken by central differences of step `eps`.
/// An empty `coords` checks every coordinate.
template <class T>
T gradcheck(const ScalarFn<T>& f, const Tensor<T>& probe, T eps, std::vector<std::size_t> coords = {}) {
    if (!probe.all_finite()) throw DomainError("gradcheck: probe is not finite");
    if (coords.empty()) {
        coords.resize(probe.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
    }

    Graph<T> graph;
    const Var<T> x = graph.leaf(probe);
    const Var<T> y = f(x);
    if (y.numel() != 1) throw ShapeError("gradcheck: function must return a scalar");
    if (!std::isfinite(y.value().item())) throw DomainError("gradcheck: non-finite function value at probe");
    Tensor<T> analytic = y.requires_grad() ? graph.backward(y).of(x) : Tensor<T>(probe.shape());

    T worst = 0;
    Tensor<T> shifted = probe;
    for (std::size_t c : coords) {
        if (c >= probe.numel()) throw ShapeError("gradcheck: coordinate out of range");
        const T orig = shifted[c];
        shifted[c] = orig + eps;
        const T fp = detail::eval_scalar(f, shifted, "probe+eps");
        shifted[c] = orig - eps;
        const T fm = detail::eval_scalar(f, shifted, "probe-eps");
        shifted[c] = orig;
        const T numeric = (fp - fm) / (T(2) * eps);
        const T a = analytic[c];
        const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-8)});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace nerdi::ad
