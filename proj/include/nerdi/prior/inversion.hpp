#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nerdi/autodiff.hpp"
#include "nerdi/prior/denoiser.hpp"
#include "nerdi/trainer/adam.hpp"

namespace nerdi::prior {

struct InversionConfig {
    long steps = 300;
    double lr = 2e-2;
    int draws_per_step = 8;  // (t, eps) samples per image per step
    double t_lo = 0.02, t_hi = 0.98;
    std::uint64_t seed = 0;
};

struct InversionResult {
    ad::Tensor<double> embedding;  // [1, D]
    std::vector<double> loss_trace;
};

/// Optimizes one embedding row s* so the frozen denoiser best reconstructs the noise
/// injected into `images` (each [H, W, C]); the denoiser is conditioned on s* alone.
template <class T>
InversionResult textual_inversion(const std::vector<ad::Tensor<double>>& images, const Denoiser<T>& denoiser,
                                  const LatentCodec<T>& codec, const NoiseSchedule& sched, const ad::Tensor<double>& init,
                                  const InversionConfig& cfg) {
    if (cfg.steps < 0) throw std::invalid_argument("textual inversion: steps must be >= 0");
    if (images.empty()) throw std::invalid_argument("textual inversion: no images");
    if (init.rank() != 2 || init.dim(0) != 1) throw ShapeError("textual inversion: init must be [1, D]");
    if (!denoiser.differentiable()) {
        throw std::invalid_argument("textual inversion: the " + denoiser.name() + " denoiser is not differentiable");
    }
    std::vector<ad::Tensor<T>> param{init.cast<T>()};
    trainer::AdamState<T> opt;
    InversionResult out;
    const double inv_draws = 1.0 / double(images.size() * std::size_t(cfg.draws_per_step));

    for (long step = 0; step < cfg.steps; ++step) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step)));
        ad::Graph<T> g;
        const auto s = g.leaf(param[0]);
        ad::Var<T> loss = ad::Var<T>::scalar(T(0));
        for (const auto& img : images) {
            const auto x = ad::Var<T>::constant(img.cast<T>());
            for (int d = 0; d < cfg.draws_per_step; ++d) {
                const int t = sample_timestep(rng, sched, cfg.t_lo, cfg.t_hi);
                const auto eps = normal_tensor<T>(img.shape(), rng);
                loss = loss + diffusion_residual(denoiser, codec, x, s, t, eps, sched) * T(inv_draws);
            }
        }
        const double lv = double(loss.value().item());
        if (!std::isfinite(lv)) throw DivergenceError("textual inversion diverged", step);
        out.loss_trace.push_back(lv);
        try {
            trainer::adam_step(param, {g.backward(loss).of(s)}, opt, cfg.lr);
        } catch (const DomainError& e) {
            throw DivergenceError(std::string("textual inversion diverged: ") + e.what(), step);
        }
    }
    out.embedding = param[0].template cast<double>();
    return out;
}

inline double cosine_similarity(const ad::Tensor<double>& a, const ad::Tensor<double>& b) {
    if (a.numel() != b.numel()) throw ShapeError("cosine similarity: size mismatch");
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(std::max(aa * bb, 1e-300));
}

/// Trailing moving average with the given window (shorter at the start).
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
    std::vector<double> out(v.size());
    double acc = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= window) acc -= v[i - window];
        out[i] = acc / double(std::min(i + 1, window));
    }
    return out;
}

}  // namespace nerdi::prior
