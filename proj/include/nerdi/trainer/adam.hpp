#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nerdi/autodiff/tensor.hpp"
#include "nerdi/error.hpp"

namespace nerdi::trainer {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<ad::Tensor<T>> m, v;
    long step = 0;

    bool empty() const { return m.empty(); }
};

/// One bias-corrected Adam update in place. State is created on first use.
template <class T>
void adam_step(std::vector<ad::Tensor<T>>& params, const std::vector<ad::Tensor<T>>& grads, AdamState<T>& state,
               double lr, const AdamConfig& cfg = {}) {
    if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].shape()) {
            throw ShapeError("adam: gradient " + std::to_string(i) + " has shape " + ad::shape_str(grads[i].shape()) +
                             ", parameter has " + ad::shape_str(params[i].shape()));
        }
        if (!grads[i].all_finite()) throw DomainError("adam: non-finite gradient in tensor " + std::to_string(i));
    }
    if (state.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.shape());
            state.v.emplace_back(p.shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam: optimizer state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto g = grads[i].data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            const double mk = cfg.beta1 * double(m[k]) + (1.0 - cfg.beta1) * gk;
            const double vk = cfg.beta2 * double(v[k]) + (1.0 - cfg.beta2) * gk * gk;
            m[k] = T(mk);
            v[k] = T(vk);
            p[k] = T(double(p[k]) - lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps));
        }
    }
}

}  // namespace nerdi::trainer
